use alloc::string::String;
use alloc::vec::Vec;

use crate::{KernelName, PaddingMode};

/// Declarative layer description; parameters are materialized by
/// [`super::build`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        k: usize,
        #[cfg_attr(feature = "serde", serde(default = "one"))]
        stride: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    Relu,
    Sigmoid,
    MaxDense {
        k: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    Subsample {
        s: usize,
    },
    MaxPool {
        k: usize,
        s: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    AvgPool {
        k: usize,
        s: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    BlurPool {
        filter: KernelName,
        s: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    MaxBlurPool {
        k: usize,
        filter: KernelName,
        s: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "is_false"))]
        swapped: bool,
    },
    ConvBlurPool {
        out_channels: usize,
        k: usize,
        filter: KernelName,
        s: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    BlurUpsample {
        filter: KernelName,
        factor: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        pad: PaddingMode,
    },
    GlobalAvgPool,
    Flatten,
    Linear {
        out: usize,
    },
}

#[cfg(feature = "serde")]
fn one() -> usize {
    1
}

#[cfg(feature = "serde")]
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Softmax cross-entropy over a `[classes]` output.
    #[default]
    SoftmaxXent,
    /// Image-to-image map; no classifier head.
    None,
}

/// A feed-forward network: input shape `[C, H, W]`, ordered layers and a
/// loss head.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetworkSpec {
    pub name: String,
    pub input: [usize; 3],
    /// Width of the classifier head (0 when `loss` is `none`).
    #[cfg_attr(feature = "serde", serde(default))]
    pub classes: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub loss: LossKind,
    pub layers: Vec<LayerSpec>,
}

impl LayerSpec {
    pub fn stride(&self) -> usize {
        match self {
            LayerSpec::Conv { stride, .. } => *stride,
            LayerSpec::Subsample { s }
            | LayerSpec::MaxPool { s, .. }
            | LayerSpec::AvgPool { s, .. }
            | LayerSpec::BlurPool { s, .. }
            | LayerSpec::MaxBlurPool { s, .. }
            | LayerSpec::ConvBlurPool { s, .. } => *s,
            _ => 1,
        }
    }
}
