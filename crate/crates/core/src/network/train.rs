use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use super::{argmax, Network, ToyDataset};
use crate::error::arg_err;
use crate::tensor::{shift_circular, ShiftOffset};
use crate::{Error, Result, Tensor};

/// Plain SGD with momentum, constant learning rate, no weight decay.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Drives shuffling and augmentation offsets.
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Independent circular shift per sample, uniform in `[-m, m]` on both
    /// axes, when set.
    pub augment: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 48,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Fraction of training samples classified correctly while fitting.
    pub accuracy: f64,
}

impl TrainConfig {
    fn validate(&self, input_hw: (usize, usize)) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(arg_err!("epochs and batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(arg_err!("lr must be finite and >= 0, momentum in [0, 1)"));
        }
        if let Some(m) = self.augment {
            if m >= input_hw.0.min(input_hw.1) {
                return Err(arg_err!("augmentation offset {m} exceeds the input size"));
            }
        }
        Ok(())
    }
}

/// Fits `net` to `data` and returns it with one log line per epoch.
pub fn train(
    mut net: Network,
    data: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(arg_err!("empty dataset"));
    }
    let [_, h, w] = net.spec().input;
    cfg.validate((h, w))?;
    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Tensor> = net
        .parameters()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (mut x, labels) = data.batch(chunk);
            if let Some(m) = cfg.augment {
                x = augment(&x, m, &mut rng)?;
            }
            let lg = match net.loss_and_grads(&x, &labels) {
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            if !lg.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: lg.loss,
                });
            }
            loss_sum += lg.loss * chunk.len() as f64;
            let k = lg.probs.shape()[1];
            correct += lg
                .probs
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let grads: Vec<&Tensor> = lg
                .grads
                .iter()
                .flat_map(|g| [&g.weights, &g.bias])
                .collect();
            let mut vi = 0;
            for layer in net.layers_mut() {
                if let Some((wt, bs)) = layer.params_mut() {
                    for p in [wt, bs] {
                        let v = velocity[vi].data_mut();
                        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v).zip(grads[vi].data()) {
                            *vv = cfg.momentum * *vv + gv;
                            *pv -= cfg.lr * *vv;
                        }
                        vi += 1;
                    }
                }
            }
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        log.push(EpochLog {
            epoch,
            loss,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((net, log))
}

fn augment(x: &Tensor, max: usize, rng: &mut Pcg64) -> Result<Tensor> {
    let m = max as i64;
    let items: Vec<Tensor> = (0..x.shape()[0])
        .map(|i| {
            let off = ShiftOffset::new(rng.random_range(-m..=m), rng.random_range(-m..=m));
            shift_circular(&x.index_axis0(i)?, off)
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&items)
}

/// Plain top-1 accuracy.
pub fn evaluate_accuracy(net: &Network, data: &ToyDataset) -> Result<f64> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(64) {
        let (x, labels) = data.batch(chunk);
        let p = net.probabilities(&x)?;
        let k = p.shape()[1];
        correct += p
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::presets::{toy_vgg, ToyPooling};
    use super::super::toy_dataset;
    use super::*;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let net = Network::seeded(&toy_vgg(ToyPooling::MaxPool), 0).unwrap();
        let data = toy_dataset(0, 8, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, log) = train(net.clone(), &data, &cfg).unwrap();
        assert_eq!(trained.parameters(), net.parameters());
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn same_seeds_same_log() {
        let spec = toy_vgg(ToyPooling::MaxPool);
        let data = toy_dataset(5, 16, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            augment: Some(3),
            ..TrainConfig::default()
        };
        let run = || train(Network::seeded(&spec, 1).unwrap(), &data, &cfg).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a.parameters(), b.parameters());
    }

    #[test]
    fn divergence_is_reported() {
        let spec = toy_vgg(ToyPooling::MaxPool);
        let data = toy_dataset(5, 16, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e200,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let err = train(Network::seeded(&spec, 1).unwrap(), &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn bad_config_rejected() {
        let spec = toy_vgg(ToyPooling::MaxPool);
        let data = toy_dataset(5, 8, 4).unwrap();
        let net = Network::seeded(&spec, 1).unwrap();
        let cfg = TrainConfig {
            augment: Some(40),
            ..TrainConfig::default()
        };
        assert!(train(net.clone(), &data, &cfg).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(net, &data, &cfg).is_err());
    }
}
