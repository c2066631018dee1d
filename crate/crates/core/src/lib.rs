//! Anti-aliased downsampling laboratory.
//!
//! The crate is `no_std` + `alloc`. Everything here is a pure function of its
//! inputs: tensors, blur kernels, the layer zoo with exact backward passes, a
//! small deterministic CNN trainer and the shift-equivariance instruments.
//! File formats, the CLI and anything touching the OS live in the `bplab`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;

pub mod filters;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
pub use filters::{BlurKernel, KernelName};
pub use layers::{Layer, LayerCache, ParamGrads};
pub use network::{Network, NetworkSpec, ToyDataset, TrainConfig};
pub use tensor::{PaddingMode, ShiftOffset, Tensor};
