//! Network assembly, deterministic initialization, forward/backward over a
//! whole net, the SGD trainer and the synthetic glyph dataset.
//!
//! Randomness comes from `rand_pcg::Pcg64` (PCG XSL-RR 128/64) seeded with
//! `seed_from_u64`, so every number is reproducible from its seed on any
//! platform.

mod dataset;
pub mod presets;
mod spec;
mod train;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::filters::make_kernel;
use crate::layers::{ConvParams, Layer, LayerCache, ParamGrads};
use crate::{math, Error, Result, Tensor};

pub use dataset::{nearest_centroid_accuracy, toy_dataset, Glyph, ToyDataset};
pub use spec::{LayerSpec, LossKind, NetworkSpec};
pub use train::{evaluate_accuracy, train, EpochLog, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    /// Unbatched feature shapes; `shapes[0]` is the input, `shapes[l]` the
    /// output of layer `l`.
    shapes: Vec<Vec<usize>>,
}

/// Builds a network with zero parameters after validating the shape chain.
pub fn build(spec: &NetworkSpec) -> Result<Network> {
    let mut shape = spec.input.to_vec();
    if shape.contains(&0) {
        return Err(Error::Build {
            layer: 0,
            reason: format!("input shape {shape:?} has a zero extent"),
        });
    }
    let mut shapes = vec![shape.clone()];
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, ls) in spec.layers.iter().enumerate() {
        let idx = i + 1;
        let layer = materialize(ls, &shape).map_err(|e| Error::Build {
            layer: idx,
            reason: format!("{e}"),
        })?;
        shape = layer.output_shape(&shape).map_err(|e| Error::Build {
            layer: idx,
            reason: format!("{e}"),
        })?;
        shapes.push(shape.clone());
        layers.push(layer);
    }
    if spec.loss == LossKind::SoftmaxXent && shape != [spec.classes] {
        return Err(Error::Build {
            layer: spec.layers.len(),
            reason: format!(
                "classifier output {shape:?} does not match {} classes",
                spec.classes
            ),
        });
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
        shapes,
    })
}

fn materialize(ls: &LayerSpec, input: &[usize]) -> Result<Layer> {
    let channels = |what: &str| match *input {
        [c, _, _] => Ok(c),
        _ => Err(crate::error::shape_err!(
            "{what} needs a [C,H,W] input, got {input:?}"
        )),
    };
    let conv = |out: usize, k: usize, cin: usize| {
        if out == 0 || k == 0 {
            return Err(crate::error::arg_err!(
                "conv needs out_channels >= 1 and k >= 1"
            ));
        }
        ConvParams::new(
            Tensor::zeros(vec![out, cin, k, k]),
            Tensor::zeros(vec![out]),
        )
    };
    Ok(match *ls {
        LayerSpec::Conv {
            out_channels,
            k,
            stride,
            pad,
        } => Layer::Conv2d {
            params: conv(out_channels, k, channels("conv")?)?,
            stride,
            pad,
        },
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Sigmoid => Layer::Sigmoid,
        LayerSpec::MaxDense { k, pad } => Layer::MaxDense { k, pad },
        LayerSpec::Subsample { s } => Layer::Subsample { s },
        LayerSpec::MaxPool { k, s, pad } => Layer::MaxPool { k, s, pad },
        LayerSpec::AvgPool { k, s, pad } => Layer::AvgPool { k, s, pad },
        LayerSpec::BlurPool { filter, s, pad } => Layer::BlurPool {
            kernel: make_kernel(filter),
            s,
            pad,
        },
        LayerSpec::MaxBlurPool {
            k,
            filter,
            s,
            pad,
            swapped,
        } => Layer::MaxBlurPool {
            k,
            kernel: make_kernel(filter),
            s,
            pad,
            swapped,
        },
        LayerSpec::ConvBlurPool {
            out_channels,
            k,
            filter,
            s,
            pad,
        } => Layer::ConvBlurPool {
            params: conv(out_channels, k, channels("conv_blur_pool")?)?,
            kernel: make_kernel(filter),
            s,
            pad,
        },
        LayerSpec::BlurUpsample {
            filter,
            factor,
            pad,
        } => Layer::BlurUpsample {
            kernel: make_kernel(filter),
            factor,
            pad,
        },
        LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
        LayerSpec::Flatten => Layer::Flatten,
        LayerSpec::Linear { out } => {
            let [f] = *input else {
                return Err(crate::error::shape_err!(
                    "linear needs a flat input, got {input:?}"
                ));
            };
            if out == 0 {
                return Err(crate::error::arg_err!("linear needs out >= 1"));
            }
            Layer::Linear {
                weights: Tensor::zeros(vec![out, f]),
                bias: Tensor::zeros(vec![out]),
            }
        }
    })
}

/// Kaiming-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))` drawn
/// layer by layer in order from one `Pcg64` stream; biases are zero.
pub fn init_params(mut net: Network, seed: u64) -> Network {
    let mut rng = Pcg64::seed_from_u64(seed);
    for layer in &mut net.layers {
        if let Some((w, b)) = layer.params_mut() {
            let fan_in: usize = w.shape()[1..].iter().product();
            let bound = math::sqrt(6.0 / fan_in as f64);
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            b.data_mut().fill(0.0);
        }
    }
    net
}

/// Per-layer feature maps and the network output for a batch.
#[derive(Debug, Clone)]
pub struct ForwardAll {
    /// `features[0]` is the (batched) input, `features[l]` the output of
    /// layer `l`.
    pub features: Vec<Tensor>,
    /// Softmax of the output for classifier networks, `[N, classes]`.
    pub probs: Option<Tensor>,
}

impl ForwardAll {
    pub fn output(&self) -> &Tensor {
        self.features
            .last()
            .expect("features always holds the input")
    }
}

/// Row-wise numerically stable softmax of `[N, K]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [n, k] = *logits.shape() else {
        return Err(crate::error::shape_err!(
            "softmax expects [N, K], got {:?}",
            logits.shape()
        ));
    };
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| math::exp(v - m)).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    Ok(Tensor::from_parts(vec![n, k], out))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Unbatched feature shape after layer `l` (`l = 0` is the input).
    pub fn feature_shape(&self, l: usize) -> Option<&[usize]> {
        self.shapes.get(l).map(Vec::as_slice)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Build and initialize in one step.
    pub fn seeded(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        Ok(init_params(build(spec)?, seed))
    }

    /// Product of the strides of layers `1..=l`.
    pub fn cumulative_stride(&self, l: usize) -> usize {
        self.layers[..l.min(self.layers.len())]
            .iter()
            .map(|layer| layer.spatial_stride().unwrap_or(1))
            .product()
    }

    /// Copies every parameter tensor, in layer order, weights before bias.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    /// Replaces parameters from the layout produced by [`Network::parameters`].
    pub fn set_parameters(&mut self, params: &[Tensor]) -> Result<()> {
        let expected = self.layers.iter().filter(|l| l.params().is_some()).count() * 2;
        if params.len() != expected {
            return Err(crate::error::shape_err!(
                "expected {expected} parameter tensors, got {}",
                params.len()
            ));
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                let (nw, nb) = (it.next().unwrap(), it.next().unwrap());
                nw.expect_shape(w.shape())?;
                nb.expect_shape(b.shape())?;
                *w = nw.clone();
                *b = nb.clone();
            }
        }
        Ok(())
    }

    fn batched(&self, x: &Tensor) -> Result<Tensor> {
        let input = &self.shapes[0];
        if x.shape() == input.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(input);
            return x.clone().reshape(shape);
        }
        if x.rank() == 4 && x.shape()[1..] == input[..] {
            return Ok(x.clone());
        }
        Err(crate::error::shape_err!(
            "network expects {input:?} or [N, ..], got {:?}",
            x.shape()
        ))
    }

    /// Runs every layer, keeping all intermediate feature maps.
    pub fn forward_all(&self, x: &Tensor) -> Result<ForwardAll> {
        let mut features = Vec::with_capacity(self.layers.len() + 1);
        features.push(self.batched(x)?);
        for layer in &self.layers {
            let (y, _) = layer.forward(features.last().unwrap())?;
            features.push(y);
        }
        let probs = match self.spec.loss {
            LossKind::SoftmaxXent => Some(softmax(features.last().unwrap())?),
            LossKind::None => None,
        };
        Ok(ForwardAll { features, probs })
    }

    /// Output of the whole network without keeping intermediates.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_range(&self.batched(x)?, 0, self.layers.len())
    }

    /// Runs layers `from+1 ..= to` on a batched feature map at depth `from`.
    pub fn forward_range(&self, x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[from..to] {
            cur = layer.forward(&cur)?.0;
        }
        Ok(cur)
    }

    /// Class probabilities `[N, classes]`.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.forward(x)?)
    }

    /// Mean softmax cross-entropy over the batch, its gradient for every
    /// parameterized layer (in layer order) and the batch probabilities.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<LossGrads> {
        let x = self.batched(x)?;
        let n = x.shape()[0];
        if labels.len() != n {
            return Err(crate::error::shape_err!(
                "{} labels for a batch of {n}",
                labels.len()
            ));
        }
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = y;
        }
        let probs = softmax(&cur)?;
        let k = probs.shape()[1];
        let mut loss = 0.0;
        let mut dlogits = probs.data().to_vec();
        for (b, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(crate::error::arg_err!(
                    "label {label} out of range for {k} classes"
                ));
            }
            loss -= math::ln(probs.data()[b * k + label].max(f64::MIN_POSITIVE));
            dlogits[b * k + label] -= 1.0;
        }
        let inv = 1.0 / n as f64;
        loss *= inv;
        dlogits.iter_mut().for_each(|g| *g *= inv);
        let mut grad = Tensor::from_parts(vec![n, k], dlogits);
        let mut grads: Vec<ParamGrads> = Vec::new();
        for (layer, cache) in self.layers.iter().zip(&caches).rev() {
            let (dx, pg) = layer.backward(cache, &grad)?;
            if let Some(pg) = pg {
                grads.push(pg);
            }
            grad = dx;
        }
        grads.reverse();
        Ok(LossGrads { loss, grads, probs })
    }
}

pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<ParamGrads>,
    pub probs: Tensor,
}

#[cfg(test)]
mod tests {
    use super::presets::{toy_vgg, ToyPooling};
    use super::*;
    use crate::tensor::{shift_circular, ShiftOffset};
    use crate::{KernelName, PaddingMode};

    fn noise(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Pcg64::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn toy_vgg_shape_chain() {
        let net = build(&toy_vgg(ToyPooling::MaxBlurPool(KernelName::Bin5))).unwrap();
        // conv relu pool x3, then gap + linear
        assert_eq!(net.feature_shape(9).unwrap(), &[16, 4, 4]);
        assert_eq!(net.cumulative_stride(9), 8);
        assert_eq!(net.feature_shape(11).unwrap(), &[4]);
    }

    #[test]
    fn odd_extent_under_circular_is_rejected() {
        let mut spec = toy_vgg(ToyPooling::MaxPool);
        spec.input = [1, 31, 32];
        match build(&spec) {
            Err(Error::Build { layer, .. }) => assert_eq!(layer, 3),
            other => panic!("{other:?}"),
        }
        spec.input = [1, 32, 32];
        spec.classes = 5;
        assert!(matches!(build(&spec), Err(Error::Build { .. })));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = toy_vgg(ToyPooling::MaxPool);
        let a = Network::seeded(&spec, 7).unwrap();
        let b = Network::seeded(&spec, 7).unwrap();
        let c = Network::seeded(&spec, 8).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn probabilities_sum_to_one_and_zero_head_is_uniform() {
        let spec = toy_vgg(ToyPooling::MaxPool);
        let mut net = Network::seeded(&spec, 1).unwrap();
        let x = noise(&[3, 1, 32, 32], 2);
        let out = net.forward_all(&x).unwrap();
        for row in out.probs.as_ref().unwrap().data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        if let Some((w, b)) = net.layers_mut().last_mut().unwrap().params_mut() {
            w.data_mut().fill(0.0);
            b.data_mut().fill(0.0);
        }
        let p = net.probabilities(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn stride_one_circular_net_is_equivariant_layer_by_layer() {
        let pad = PaddingMode::Circular;
        let spec = NetworkSpec {
            name: "flat".into(),
            input: [2, 9, 11],
            classes: 0,
            loss: LossKind::None,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 3,
                    k: 3,
                    stride: 1,
                    pad,
                },
                LayerSpec::Relu,
                LayerSpec::MaxDense { k: 2, pad },
                LayerSpec::BlurPool {
                    filter: KernelName::Bin4,
                    s: 1,
                    pad,
                },
                LayerSpec::Conv {
                    out_channels: 2,
                    k: 5,
                    stride: 1,
                    pad,
                },
            ],
        };
        let net = Network::seeded(&spec, 3).unwrap();
        let x = noise(&[2, 9, 11], 4);
        let base = net.forward_all(&x).unwrap();
        for off in [
            ShiftOffset::new(1, 0),
            ShiftOffset::new(4, -3),
            ShiftOffset::new(-7, 10),
        ] {
            let moved = net.forward_all(&shift_circular(&x, off).unwrap()).unwrap();
            for (a, b) in base.features.iter().zip(&moved.features) {
                assert_eq!(&shift_circular(a, off).unwrap(), b);
            }
        }
    }

    #[test]
    fn finite_difference_gradients_on_probe_net() {
        let pad = PaddingMode::Circular;
        let spec = NetworkSpec {
            name: "probe".into(),
            input: [1, 6, 6],
            classes: 3,
            loss: LossKind::SoftmaxXent,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    k: 3,
                    stride: 1,
                    pad,
                },
                LayerSpec::Relu,
                LayerSpec::MaxBlurPool {
                    k: 2,
                    filter: KernelName::Tri3,
                    s: 2,
                    pad,
                    swapped: false,
                },
                LayerSpec::Flatten,
                LayerSpec::Linear { out: 3 },
            ],
        };
        let net = Network::seeded(&spec, 11).unwrap();
        let x = noise(&[2, 1, 6, 6], 12);
        let labels = [0, 2];
        let lg = net.loss_and_grads(&x, &labels).unwrap();
        let params = net.parameters();
        let analytic: Vec<&Tensor> = lg
            .grads
            .iter()
            .flat_map(|g| [&g.weights, &g.bias])
            .collect();
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for i in 0..p.len() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[pi].data_mut()[i] += delta;
                    let mut n = net.clone();
                    n.set_parameters(&ps).unwrap();
                    n.loss_and_grads(&x, &labels).unwrap().loss
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[pi].data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    rel < 1e-4 || (a - numeric).abs() < 1e-9,
                    "param {pi}[{i}]: {a} vs {numeric}"
                );
            }
        }
    }
}
