//! The lab's experiments as plain functions. The command line and the
//! acceptance suite both go through these.

use bplab_core::filters::make_kernel;
use bplab_core::layers::{max_blur_pool, max_pool};
use bplab_core::metrics::{
    adversarial_shift_curve, classification_consistency, equivariance_heatmap, image_tv,
    psnr_stability, AdversarialResult, EquivarianceMap, ShiftMode,
};
use bplab_core::network::presets::encoder_decoder;
use bplab_core::network::{evaluate_accuracy, toy_dataset, train, EpochLog};
use bplab_core::tensor::shift_circular_1d;
use bplab_core::{KernelName, Network, NetworkSpec, PaddingMode, Tensor, ToyDataset, TrainConfig};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Held-out images shared by every run so that variants are compared on
/// the same samples.
pub const TEST_DATA_SEED: u64 = 0x7E57_DA7A;

/// Dataset sizes and optimizer settings for toy classification runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProtocol {
    pub train_samples: usize,
    pub test_samples: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub augment: Option<usize>,
}

impl Default for ToyProtocol {
    fn default() -> Self {
        let cfg = TrainConfig::default();
        ToyProtocol {
            train_samples: 512,
            test_samples: 256,
            num_classes: 4,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            momentum: cfg.momentum,
            augment: cfg.augment,
        }
    }
}

impl ToyProtocol {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            augment: self.augment,
        }
    }

    pub fn train_data(&self, seed: u64) -> Result<ToyDataset> {
        Ok(toy_dataset(seed, self.train_samples, self.num_classes)?)
    }

    pub fn test_data(&self) -> Result<ToyDataset> {
        Ok(toy_dataset(
            TEST_DATA_SEED,
            self.test_samples,
            self.num_classes,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedToy {
    pub net: Network,
    pub log: Vec<EpochLog>,
    pub test_accuracy: f64,
}

/// Initializes `spec` from `seed`, fits it on the training set drawn from
/// `seed` and scores it on the shared test set.
pub fn train_toy(spec: &NetworkSpec, seed: u64, protocol: &ToyProtocol) -> Result<TrainedToy> {
    let net = Network::seeded(spec, seed)?;
    let data = protocol.train_data(seed)?;
    let (net, log) = train(net, &data, &protocol.train_config(seed))?;
    let test_accuracy = evaluate_accuracy(&net, &protocol.test_data()?)?;
    Ok(TrainedToy {
        net,
        log,
        test_accuracy,
    })
}

/// Exhaustive circular-shift consistency on the shared test set.
pub fn toy_consistency(net: &Network, protocol: &ToyProtocol) -> Result<f64> {
    let test = protocol.test_data()?;
    Ok(classification_consistency(
        net,
        &test.images,
        ShiftMode::Circular,
        1000,
        0,
    )?)
}

/// Adversarial accuracy on the shared test set for `0..=max_shift`.
pub fn toy_adversarial(
    net: &Network,
    protocol: &ToyProtocol,
    max_shift: usize,
) -> Result<Vec<AdversarialResult>> {
    let test = protocol.test_data()?;
    let shifts: Vec<usize> = (0..=max_shift).collect();
    Ok(adversarial_shift_curve(
        net,
        &test.images,
        &test.labels,
        &shifts,
    )?)
}

/// The one-dimensional pooling example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toy1d {
    pub filter: KernelName,
    pub input: Vec<f64>,
    pub max_pool: Vec<f64>,
    pub max_pool_shifted: Vec<f64>,
    pub max_blur_pool: Vec<f64>,
    pub max_blur_pool_shifted: Vec<f64>,
}

pub const TOY1D_SIGNAL: [f64; 8] = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];

pub fn toy1d(filter: KernelName) -> Result<Toy1d> {
    toy1d_padded(filter, PaddingMode::Circular)
}

pub fn toy1d_padded(filter: KernelName, pad: PaddingMode) -> Result<Toy1d> {
    let x = Tensor::from_slice(&TOY1D_SIGNAL);
    let shifted = shift_circular_1d(&x, -1)?;
    let kernel = make_kernel(filter);
    let mp = |t: &Tensor| max_pool(t, 2, 2, pad).map(Tensor::into_data);
    let mbp = |t: &Tensor| max_blur_pool(t, 2, &kernel, 2, pad).map(Tensor::into_data);
    Ok(Toy1d {
        filter,
        input: TOY1D_SIGNAL.to_vec(),
        max_pool: mp(&x)?,
        max_pool_shifted: mp(&shifted)?,
        max_blur_pool: mbp(&x)?,
        max_blur_pool_shifted: mbp(&shifted)?,
    })
}

/// Generic input for heatmaps: i.i.d. uniform `[0, 1)` pixels.
pub fn random_input(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = Pcg64::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

pub fn heatmap(net: &Network, input_seed: u64, layer: usize) -> Result<EquivarianceMap> {
    let x = random_input(input_seed, &net.spec().input);
    Ok(equivariance_heatmap(net, &x, layer)?)
}

/// Side of the square images used by the encoder-decoder comparison.
pub const ENCDEC_SIZE: usize = 32;
/// Images averaged over in the encoder-decoder comparison.
pub const ENCDEC_IMAGES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsampleStability {
    pub down_filter: KernelName,
    pub up_filter: KernelName,
    /// Mean PSNR over horizontal shifts `1..W`, averaged over the images.
    pub psnr_stability: f64,
    /// Mean image TV (x100) of the outputs.
    pub output_tv: f64,
}

/// Test images for the encoder-decoder comparison.
pub fn encdec_images(seed: u64, count: usize) -> Result<Vec<Tensor>> {
    let data = toy_dataset(seed, count.max(4), 4)?;
    Ok((0..count).map(|i| data.image(i)).collect())
}

/// Randomly initialized encoder-decoder (weights from `seed`) with the given
/// resampling filters, scored on `images`. Filter pairs with the same
/// parameter shapes share weights for a given seed.
pub fn upsample_stability(
    down: KernelName,
    up: KernelName,
    seed: u64,
    images: &[Tensor],
) -> Result<UpsampleStability> {
    let net = Network::seeded(&encoder_decoder(down, up, ENCDEC_SIZE), seed)?;
    let f = |x: &Tensor| -> bplab_core::Result<Tensor> {
        let y = net.forward(x)?;
        let shape = y.shape()[1..].to_vec();
        y.reshape(shape)
    };
    let shifts: Vec<i64> = (1..ENCDEC_SIZE as i64).collect();
    let (mut ps, mut tv) = (0.0, 0.0);
    for x in images {
        ps += psnr_stability(f, x, &shifts)?;
        tv += image_tv(&f(x)?)?;
    }
    let n = images.len() as f64;
    Ok(UpsampleStability {
        down_filter: down,
        up_filter: up,
        psnr_stability: ps / n,
        output_tv: tv / n,
    })
}

/// Filter table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub name: String,
    pub flag: String,
    pub size: usize,
    pub taps: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn kernel_table() -> Vec<KernelRow> {
    KernelName::ALL
        .iter()
        .map(|&n| {
            let k = make_kernel(n);
            KernelRow {
                name: n.to_string(),
                flag: n.flag().to_string(),
                size: k.size(),
                taps: k.taps().to_vec(),
                normalized: k.norm_taps().to_vec(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy1d_sequences() {
        let t = toy1d(KernelName::Tri3).unwrap();
        assert_eq!(t.max_pool, [0.0, 1.0, 0.0, 1.0]);
        assert_eq!(t.max_pool_shifted, [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.max_blur_pool, [0.5, 1.0, 0.5, 1.0]);
        assert_eq!(t.max_blur_pool_shifted, [0.75, 0.75, 0.75, 0.75]);
        let d = toy1d(KernelName::Delta1).unwrap();
        assert_eq!(d.max_blur_pool, d.max_pool);
    }

    #[test]
    fn kernel_table_lists_every_filter() {
        let t = kernel_table();
        assert_eq!(t.len(), 7);
        assert_eq!(t[4].taps, [1.0, 4.0, 6.0, 4.0, 1.0]);
    }
}
