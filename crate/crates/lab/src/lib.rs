//! Artifact side of the lab: file formats, reports, experiments and the
//! command line.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod export;
pub mod specs;
pub mod tensor_io;

pub use error::{LabError, Result};
