//! Materialized layers with forward and exact backward passes.
//!
//! Spatial layers take `[N, C, H, W]` batches; `Linear` takes `[N, F]`.
//! Composite layers are evaluated through the same primitives they are
//! defined as, so `MaxPool == Subsample . MaxDense` and friends hold exactly.

mod ops;

use alloc::vec;
use alloc::vec::Vec;

pub use ops::{
    avg_pool, blur_pool, blur_upsample, conv2d, conv_blur_pool, max_blur_pool, max_dense, max_pool,
    relu, subsample,
};

use crate::error::{arg_err, shape_err};
use crate::filters::{blur_strided, blur_strided_adjoint};
use crate::{math, BlurKernel, Error, PaddingMode, Result, Tensor};
use ops::{ConvCache, Phase};

/// Learnable convolution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[C_out, C_in, k, k]`
    pub weights: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let [cout, _, k, k2] = *weights.shape() else {
            return Err(shape_err!("conv weights must be rank 4"));
        };
        if k != k2 {
            return Err(shape_err!("conv kernel must be square"));
        }
        bias.expect_shape(&[cout])?;
        Ok(ConvParams { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        params: ConvParams,
        stride: usize,
        pad: PaddingMode,
    },
    Relu,
    Sigmoid,
    MaxDense {
        k: usize,
        pad: PaddingMode,
    },
    Subsample {
        s: usize,
    },
    MaxPool {
        k: usize,
        s: usize,
        pad: PaddingMode,
    },
    AvgPool {
        k: usize,
        s: usize,
        pad: PaddingMode,
    },
    BlurPool {
        kernel: BlurKernel,
        s: usize,
        pad: PaddingMode,
    },
    /// Dense max then blur pool. `swapped` puts the blur before the max
    /// (ablation only).
    MaxBlurPool {
        k: usize,
        kernel: BlurKernel,
        s: usize,
        pad: PaddingMode,
        swapped: bool,
    },
    ConvBlurPool {
        params: ConvParams,
        kernel: BlurKernel,
        s: usize,
        pad: PaddingMode,
    },
    BlurUpsample {
        kernel: BlurKernel,
        factor: usize,
        pad: PaddingMode,
    },
    /// `[N, C, H, W] -> [N, C]`
    GlobalAvgPool,
    /// `[N, C, H, W] -> [N, C*H*W]`
    Flatten,
    /// `weights [out, in]`, `bias [out]`
    Linear {
        weights: Tensor,
        bias: Tensor,
    },
}

/// Gradients for a parameterized layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Forward byproducts needed for an exact backward pass.
pub struct LayerCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    phase: Phase,
    inner: CacheKind,
}

enum CacheKind {
    Conv(ConvCache),
    Relu(Vec<bool>),
    Sigmoid(Tensor),
    Max(Vec<u32>),
    Stateless,
    /// Max routing of the dense stage for a max-then-blur pool.
    MaxBlur {
        arg: Vec<u32>,
        dense_shape: Vec<usize>,
    },
    /// Swapped order: blurred input shape and the max routing on it.
    BlurMax {
        arg: Vec<u32>,
    },
    ConvBlur {
        conv: ConvCache,
        mask: Vec<bool>,
        dense_shape: Vec<usize>,
    },
    Linear(Tensor),
}

impl LayerCache {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn stale() -> Error {
    Error::Cache("cache was produced by a different layer kind".into())
}

impl Layer {
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d { params, .. } | Layer::ConvBlurPool { params, .. } => {
                Some((&params.weights, &params.bias))
            }
            Layer::Linear { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d { params, .. } | Layer::ConvBlurPool { params, .. } => {
                Some((&mut params.weights, &mut params.bias))
            }
            Layer::Linear { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    /// Spatial downsampling factor, or `None` for layers that do not map a
    /// spatial grid onto a (coarser) spatial grid.
    pub fn spatial_stride(&self) -> Option<usize> {
        match self {
            Layer::Conv2d { stride, .. } => Some(*stride),
            Layer::Relu | Layer::Sigmoid | Layer::MaxDense { .. } => Some(1),
            Layer::Subsample { s }
            | Layer::MaxPool { s, .. }
            | Layer::AvgPool { s, .. }
            | Layer::BlurPool { s, .. }
            | Layer::MaxBlurPool { s, .. }
            | Layer::ConvBlurPool { s, .. } => Some(*s),
            Layer::BlurUpsample { .. }
            | Layer::GlobalAvgPool
            | Layer::Flatten
            | Layer::Linear { .. } => None,
        }
    }

    pub fn padding(&self) -> Option<PaddingMode> {
        match self {
            Layer::Conv2d { pad, .. }
            | Layer::MaxDense { pad, .. }
            | Layer::MaxPool { pad, .. }
            | Layer::AvgPool { pad, .. }
            | Layer::BlurPool { pad, .. }
            | Layer::MaxBlurPool { pad, .. }
            | Layer::ConvBlurPool { pad, .. }
            | Layer::BlurUpsample { pad, .. } => Some(*pad),
            _ => None,
        }
    }

    /// Short human-readable tag.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::MaxDense { .. } => "max_dense",
            Layer::Subsample { .. } => "subsample",
            Layer::MaxPool { .. } => "max_pool",
            Layer::AvgPool { .. } => "avg_pool",
            Layer::BlurPool { .. } => "blur_pool",
            Layer::MaxBlurPool { .. } => "max_blur_pool",
            Layer::ConvBlurPool { .. } => "conv_blur_pool",
            Layer::BlurUpsample { .. } => "blur_upsample",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "linear",
        }
    }

    /// Output shape for an unbatched input shape (`[C, H, W]` or `[F]`).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |input: &[usize]| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(shape_err!(
                    "{} needs a [C,H,W] input, got {input:?}",
                    self.kind_name()
                )),
            }
        };
        let strided = |input: &[usize], k: usize, s: usize, pad: PaddingMode| {
            let (c, h, w) = spatial(input)?;
            if k == 0 || s == 0 {
                return Err(arg_err!("window and stride must be >= 1"));
            }
            if pad == PaddingMode::Circular && (h % s != 0 || w % s != 0) {
                return Err(shape_err!(
                    "stride {s} does not divide {h}x{w} under circular padding"
                ));
            }
            if h < s || w < s {
                return Err(shape_err!("stride {s} exceeds {h}x{w}"));
            }
            Ok(vec![c, h / s, w / s])
        };
        match self {
            Layer::Conv2d {
                params,
                stride,
                pad,
            } => {
                let (c, _, _) = spatial(input)?;
                if c != params.in_channels() {
                    return Err(shape_err!(
                        "conv expects {} channels, got {c}",
                        params.in_channels()
                    ));
                }
                let mut out = strided(input, params.kernel_size(), *stride, *pad)?;
                out[0] = params.out_channels();
                Ok(out)
            }
            Layer::ConvBlurPool { params, s, pad, .. } => {
                let (c, _, _) = spatial(input)?;
                if c != params.in_channels() {
                    return Err(shape_err!(
                        "conv expects {} channels, got {c}",
                        params.in_channels()
                    ));
                }
                let mut out = strided(input, params.kernel_size(), *s, *pad)?;
                out[0] = params.out_channels();
                Ok(out)
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::MaxDense { k, pad } => strided(input, *k, 1, *pad),
            Layer::Subsample { s } => strided(input, 1, *s, PaddingMode::Circular),
            Layer::MaxPool { k, s, pad } | Layer::AvgPool { k, s, pad } => {
                strided(input, *k, *s, *pad)
            }
            Layer::BlurPool { kernel, s, pad } => strided(input, kernel.size(), *s, *pad),
            Layer::MaxBlurPool { k, s, pad, .. } => strided(input, *k, *s, *pad),
            Layer::BlurUpsample { factor, .. } => {
                let (c, h, w) = spatial(input)?;
                if *factor == 0 {
                    return Err(arg_err!("upsample factor must be >= 1"));
                }
                Ok(vec![c, h * factor, w * factor])
            }
            Layer::GlobalAvgPool => {
                let (c, _, _) = spatial(input)?;
                Ok(vec![c])
            }
            Layer::Flatten => {
                let (c, h, w) = spatial(input)?;
                Ok(vec![c * h * w])
            }
            Layer::Linear { weights, .. } => match *input {
                [f] if f == weights.shape()[1] => Ok(vec![weights.shape()[0]]),
                _ => Err(shape_err!(
                    "linear expects [{}], got {input:?}",
                    weights.shape()[1]
                )),
            },
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        self.forward_phase(x, (0, 0))
    }

    /// Forward pass keeping dense positions `(j * s + ph, i * s + pw)` at
    /// every strided stage. Phase `(0, 0)` is the ordinary forward pass; a
    /// layer without stride only accepts `(0, 0)`.
    pub fn forward_phase(&self, x: &Tensor, phase: (usize, usize)) -> Result<(Tensor, LayerCache)> {
        let input_shape = x.shape().to_vec();
        if self.spatial_stride().unwrap_or(1) == 1 && phase != (0, 0) {
            return Err(arg_err!("phase {phase:?} given to an unstrided layer"));
        }
        let (y, inner) = self.forward_inner(x, phase)?;
        if !y.all_finite() {
            return Err(Error::NonFinite(self.kind_name().into()));
        }
        let cache = LayerCache {
            input_shape,
            output_shape: y.shape().to_vec(),
            phase,
            inner,
        };
        Ok((y, cache))
    }

    fn forward_inner(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, CacheKind)> {
        Ok(match self {
            Layer::Conv2d {
                params,
                stride,
                pad,
            } => {
                let (y, c) =
                    ops::conv_forward(x, &params.weights, &params.bias, *stride, *pad, phase)?;
                (y, CacheKind::Conv(c))
            }
            Layer::Relu => {
                let mask = x.data().iter().map(|&v| v > 0.0).collect();
                (relu(x), CacheKind::Relu(mask))
            }
            Layer::Sigmoid => {
                let y = x.map(|v| 1.0 / (1.0 + math::exp(-v)));
                (y.clone(), CacheKind::Sigmoid(y))
            }
            Layer::MaxDense { k, pad } => {
                let (y, arg) = ops::max_window(x, *k, 1, *pad, (0, 0))?;
                (y, CacheKind::Max(arg))
            }
            Layer::Subsample { s } => (ops::subsample_phase(x, *s, phase)?, CacheKind::Stateless),
            Layer::MaxPool { k, s, pad } => {
                let (y, arg) = ops::max_window(x, *k, *s, *pad, phase)?;
                (y, CacheKind::Max(arg))
            }
            Layer::AvgPool { k, s, pad } => (
                ops::avg_window(x, *k, *s, *pad, phase)?,
                CacheKind::Stateless,
            ),
            Layer::BlurPool { kernel, s, pad } => (
                blur_strided(x, kernel.norm_taps(), *pad, *s, phase)?,
                CacheKind::Stateless,
            ),
            Layer::MaxBlurPool {
                k,
                kernel,
                s,
                pad,
                swapped: false,
            } => {
                let (dense, arg) = ops::max_window(x, *k, 1, *pad, (0, 0))?;
                let y = blur_strided(&dense, kernel.norm_taps(), *pad, *s, phase)?;
                let dense_shape = dense.shape().to_vec();
                (y, CacheKind::MaxBlur { arg, dense_shape })
            }
            Layer::MaxBlurPool {
                k,
                kernel,
                s,
                pad,
                swapped: true,
            } => {
                let blurred = blur_strided(x, kernel.norm_taps(), *pad, 1, (0, 0))?;
                let (y, arg) = ops::max_window(&blurred, *k, *s, *pad, phase)?;
                (y, CacheKind::BlurMax { arg })
            }
            Layer::ConvBlurPool {
                params,
                kernel,
                s,
                pad,
            } => {
                let (dense, conv) =
                    ops::conv_forward(x, &params.weights, &params.bias, 1, *pad, (0, 0))?;
                let mask: Vec<bool> = dense.data().iter().map(|&v| v > 0.0).collect();
                let act = relu(&dense);
                let y = blur_strided(&act, kernel.norm_taps(), *pad, *s, phase)?;
                let dense_shape = dense.shape().to_vec();
                (
                    y,
                    CacheKind::ConvBlur {
                        conv,
                        mask,
                        dense_shape,
                    },
                )
            }
            Layer::BlurUpsample {
                kernel,
                factor,
                pad,
            } => (
                ops::blur_upsample_impl(x, kernel, *factor, *pad)?,
                CacheKind::Stateless,
            ),
            Layer::GlobalAvgPool => {
                let (n, c, h, w) = ops::nchw(x)?;
                let hw = h * w;
                let inv = 1.0 / hw as f64;
                let data = x
                    .data()
                    .chunks_exact(hw)
                    .map(|p| p.iter().sum::<f64>() * inv)
                    .collect();
                (Tensor::from_parts(vec![n, c], data), CacheKind::Stateless)
            }
            Layer::Flatten => {
                let (n, c, h, w) = ops::nchw(x)?;
                (
                    Tensor::from_parts(vec![n, c * h * w], x.data().to_vec()),
                    CacheKind::Stateless,
                )
            }
            Layer::Linear { weights, bias } => {
                let [n, f] = *x.shape() else {
                    return Err(shape_err!("linear expects [N, F], got {:?}", x.shape()));
                };
                let [o, wf] = *weights.shape() else {
                    return Err(shape_err!("linear weights must be [out, in]"));
                };
                if f != wf {
                    return Err(shape_err!("linear expects {wf} features, got {f}"));
                }
                let mut out = vec![0.0; n * o];
                for b in 0..n {
                    let xr = &x.data()[b * f..(b + 1) * f];
                    for r in 0..o {
                        let wr = &weights.data()[r * f..(r + 1) * f];
                        out[b * o + r] =
                            bias.data()[r] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                (
                    Tensor::from_parts(vec![n, o], out),
                    CacheKind::Linear(x.clone()),
                )
            }
        })
    }

    /// Backward pass for the cached forward call. Returns the input gradient
    /// and, for parameterized layers, the parameter gradients.
    pub fn backward(
        &self,
        cache: &LayerCache,
        dy: &Tensor,
    ) -> Result<(Tensor, Option<ParamGrads>)> {
        dy.expect_shape(&cache.output_shape).map_err(|_| {
            Error::Cache(alloc::format!(
                "gradient shape {:?} does not match cached output {:?}",
                dy.shape(),
                cache.output_shape
            ))
        })?;
        let in_shape = cache.input_shape.as_slice();
        let phase = cache.phase;
        Ok(match (self, &cache.inner) {
            (Layer::Conv2d { params, pad, .. }, CacheKind::Conv(c)) => {
                let (dx, dw, db) = ops::conv_backward(dy, in_shape, &params.weights, *pad, c)?;
                (
                    dx,
                    Some(ParamGrads {
                        weights: dw,
                        bias: db,
                    }),
                )
            }
            (Layer::Relu, CacheKind::Relu(mask)) => {
                let d = dy
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                (Tensor::from_parts(in_shape.to_vec(), d), None)
            }
            (Layer::Sigmoid, CacheKind::Sigmoid(y)) => {
                (dy.zip_map(y, |g, s| g * s * (1.0 - s))?, None)
            }
            (Layer::MaxDense { .. } | Layer::MaxPool { .. }, CacheKind::Max(arg)) => {
                (ops::max_window_backward(dy, in_shape, arg)?, None)
            }
            (Layer::Subsample { s }, CacheKind::Stateless) => {
                (ops::zero_stuff(dy, in_shape, *s, phase)?, None)
            }
            (Layer::AvgPool { k, s, pad }, CacheKind::Stateless) => (
                ops::avg_window_backward(dy, in_shape, *k, *s, *pad, phase)?,
                None,
            ),
            (Layer::BlurPool { kernel, s, pad }, CacheKind::Stateless) => (
                blur_strided_adjoint(dy, in_shape, kernel.norm_taps(), *pad, *s, phase)?,
                None,
            ),
            (
                Layer::MaxBlurPool {
                    kernel,
                    s,
                    pad,
                    swapped: false,
                    ..
                },
                CacheKind::MaxBlur { arg, dense_shape },
            ) => {
                let ddense =
                    blur_strided_adjoint(dy, dense_shape, kernel.norm_taps(), *pad, *s, phase)?;
                (ops::max_window_backward(&ddense, in_shape, arg)?, None)
            }
            (
                Layer::MaxBlurPool {
                    kernel,
                    pad,
                    swapped: true,
                    ..
                },
                CacheKind::BlurMax { arg },
            ) => {
                let dblur = ops::max_window_backward(dy, in_shape, arg)?;
                (
                    blur_strided_adjoint(&dblur, in_shape, kernel.norm_taps(), *pad, 1, (0, 0))?,
                    None,
                )
            }
            (
                Layer::ConvBlurPool {
                    params,
                    kernel,
                    s,
                    pad,
                },
                CacheKind::ConvBlur {
                    conv,
                    mask,
                    dense_shape,
                },
            ) => {
                let dact =
                    blur_strided_adjoint(dy, dense_shape, kernel.norm_taps(), *pad, *s, phase)?;
                let ddense: Vec<f64> = dact
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                let ddense = Tensor::from_parts(dense_shape.clone(), ddense);
                let (dx, dw, db) =
                    ops::conv_backward(&ddense, in_shape, &params.weights, *pad, conv)?;
                (
                    dx,
                    Some(ParamGrads {
                        weights: dw,
                        bias: db,
                    }),
                )
            }
            (
                Layer::BlurUpsample {
                    kernel,
                    factor,
                    pad,
                },
                CacheKind::Stateless,
            ) => (
                ops::blur_upsample_backward(dy, in_shape, kernel, *factor, *pad)?,
                None,
            ),
            (Layer::GlobalAvgPool, CacheKind::Stateless) => {
                let hw: usize = in_shape[in_shape.len() - 2..].iter().product();
                let inv = 1.0 / hw as f64;
                let mut dx = Vec::with_capacity(hw * dy.len());
                for &g in dy.data() {
                    dx.extend(core::iter::repeat_n(g * inv, hw));
                }
                (Tensor::from_parts(in_shape.to_vec(), dx), None)
            }
            (Layer::Flatten, CacheKind::Stateless) => {
                (dy.clone().reshape(in_shape.to_vec())?, None)
            }
            (Layer::Linear { weights, .. }, CacheKind::Linear(x)) => {
                let [n, f] = *x.shape() else {
                    return Err(stale());
                };
                let o = weights.shape()[0];
                let mut dx = vec![0.0; n * f];
                let mut dw = vec![0.0; o * f];
                let mut db = vec![0.0; o];
                for b in 0..n {
                    let xr = &x.data()[b * f..(b + 1) * f];
                    let dxr = &mut dx[b * f..(b + 1) * f];
                    for r in 0..o {
                        let g = dy.data()[b * o + r];
                        db[r] += g;
                        let wr = &weights.data()[r * f..(r + 1) * f];
                        let dwr = &mut dw[r * f..(r + 1) * f];
                        for i in 0..f {
                            dxr[i] += g * wr[i];
                            dwr[i] += g * xr[i];
                        }
                    }
                }
                (
                    Tensor::from_parts(vec![n, f], dx),
                    Some(ParamGrads {
                        weights: Tensor::from_parts(vec![o, f], dw),
                        bias: Tensor::from_parts(vec![o], db),
                    }),
                )
            }
            _ => return Err(stale()),
        })
    }
}
