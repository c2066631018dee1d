//! Reference toy architectures. The anti-aliased variants differ from the
//! baseline only in the pooling layer.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{LayerSpec, LossKind, NetworkSpec};
use crate::{KernelName, PaddingMode};

pub const TOY_CLASSES: usize = 4;
pub const TOY_SIZE: usize = 32;
const WIDTHS: [usize; 3] = [8, 16, 16];

/// Pooling flavour of a toy VGG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyPooling {
    MaxPool,
    MaxBlurPool(KernelName),
}

impl ToyPooling {
    pub fn spec_name(self) -> &'static str {
        match self {
            ToyPooling::MaxPool => "toy-vgg-baseline",
            ToyPooling::MaxBlurPool(KernelName::Delta1) => "toy-vgg-aa-delta1",
            ToyPooling::MaxBlurPool(KernelName::Rect2) => "toy-vgg-aa-rect2",
            ToyPooling::MaxBlurPool(KernelName::Tri3) => "toy-vgg-aa-tri3",
            ToyPooling::MaxBlurPool(KernelName::Bin4) => "toy-vgg-aa-bin4",
            ToyPooling::MaxBlurPool(KernelName::Bin5) => "toy-vgg-aa-bin5",
            ToyPooling::MaxBlurPool(KernelName::Bin6) => "toy-vgg-aa-bin6",
            ToyPooling::MaxBlurPool(KernelName::Bin7) => "toy-vgg-aa-bin7",
        }
    }
}

/// Three `conv3x3 - relu - pool(2)` blocks on a 1x32x32 input, then global
/// average pooling and a linear classifier. All padding is circular.
pub fn toy_vgg(pooling: ToyPooling) -> NetworkSpec {
    let pad = PaddingMode::Circular;
    let mut layers: Vec<LayerSpec> = Vec::new();
    for &width in &WIDTHS {
        layers.push(LayerSpec::Conv {
            out_channels: width,
            k: 3,
            stride: 1,
            pad,
        });
        layers.push(LayerSpec::Relu);
        layers.push(match pooling {
            ToyPooling::MaxPool => LayerSpec::MaxPool { k: 2, s: 2, pad },
            ToyPooling::MaxBlurPool(filter) => LayerSpec::MaxBlurPool {
                k: 2,
                filter,
                s: 2,
                pad,
                swapped: false,
            },
        });
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear { out: TOY_CLASSES });
    NetworkSpec {
        name: pooling.spec_name().to_string(),
        input: [1, TOY_SIZE, TOY_SIZE],
        classes: TOY_CLASSES,
        loss: LossKind::SoftmaxXent,
        layers,
    }
}

/// Looks up a shipped preset by name.
pub fn preset(name: &str) -> Option<NetworkSpec> {
    let pooling = match name {
        "toy-vgg-baseline" => ToyPooling::MaxPool,
        _ => {
            let filter = name.strip_prefix("toy-vgg-aa-")?.parse().ok()?;
            ToyPooling::MaxBlurPool(filter)
        }
    };
    Some(toy_vgg(pooling))
}

/// Fixed image-to-image net with two downsampling and two upsampling stages:
/// `conv - relu - down - conv - relu - down - up - conv - relu - up - conv -
/// sigmoid`. `down` is a blur pool with `down_filter`; `up` is a blur
/// upsample with `up_filter` (Delta-1 down with Rect-2 up is the plain
/// subsample / nearest-neighbour baseline).
pub fn encoder_decoder(down_filter: KernelName, up_filter: KernelName, size: usize) -> NetworkSpec {
    let pad = PaddingMode::Circular;
    let conv = |out_channels| LayerSpec::Conv {
        out_channels,
        k: 3,
        stride: 1,
        pad,
    };
    let down = LayerSpec::BlurPool {
        filter: down_filter,
        s: 2,
        pad,
    };
    let up = LayerSpec::BlurUpsample {
        filter: up_filter,
        factor: 2,
        pad,
    };
    NetworkSpec {
        name: alloc::format!("encdec-{}-{}", down_filter.flag(), up_filter.flag()),
        input: [1, size, size],
        classes: 0,
        loss: LossKind::None,
        layers: vec![
            conv(8),
            LayerSpec::Relu,
            down.clone(),
            conv(8),
            LayerSpec::Relu,
            down,
            up.clone(),
            conv(8),
            LayerSpec::Relu,
            up,
            conv(1),
            LayerSpec::Sigmoid,
        ],
    }
}
