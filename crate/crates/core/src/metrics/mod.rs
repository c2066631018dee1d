//! Shift-equivariance and shift-invariance instruments.
//!
//! Conventions:
//! * Feature distance is cosine distance of the channel vectors at each
//!   spatial site, averaged over sites. Two zero vectors are at distance 0;
//!   a zero and a nonzero vector at distance 1.
//! * Coarse feature maps are brought back to input resolution with
//!   nearest-neighbour upsampling by the cumulative stride, which commutes
//!   with shifts on the coarse grid.
//! * Consistency counts unordered pairs of distinct shifts. It is exhaustive
//!   when the shift grid has at most 1024 positions and otherwise samples
//!   the requested number of pairs from a seeded `Pcg64`.

mod sweep;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::error::{arg_err, shape_err};
use crate::network::{argmax, softmax};
use crate::tensor::{crop_shift, shift_circular, upsample_nearest, ShiftOffset};
use crate::{math, Error, Network, Result, Tensor};

pub use sweep::{outputs_for_all_shifts, outputs_for_all_shifts_direct, supports_phase_sweep};

/// Largest shift grid evaluated exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 32 * 32;
/// PSNR reported for identical images.
pub const PSNR_CLAMP_DB: f64 = 99.0;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Results are always returned in index order.
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Mean over sites of the cosine distance between channel vectors of two
/// `[C, H, W]` maps. Result lies in `[0, 2]`.
pub fn feature_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let [c, h, w] = *a.shape() else {
        return Err(shape_err!(
            "feature_distance expects [C, H, W], got {:?}",
            a.shape()
        ));
    };
    b.expect_shape(a.shape())?;
    let hw = h * w;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for site in 0..hw {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            let (x, y) = (ad[ch * hw + site], bd[ch * hw + site]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        total += match (na == 0.0, nb == 0.0) {
            (true, true) => 0.0,
            (true, false) | (false, true) => 1.0,
            _ => (1.0 - dot / (math::sqrt(na) * math::sqrt(nb))).clamp(0.0, 2.0),
        };
    }
    Ok(total / hw as f64)
}

/// Distances between shifted features and features of shifted inputs, for
/// every offset on the input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceMap {
    pub layer: usize,
    pub layer_name: String,
    /// `[H, W]`; entry `(dh, dw)` is the distance at that shift.
    pub grid: Tensor,
    /// Cumulative stride of the layer.
    pub stride: usize,
    /// Detected periodicity at `tol`.
    pub period: usize,
    pub tol: f64,
}

impl EquivarianceMap {
    /// Mean of the entries whose offset is not a multiple of `n` on both
    /// axes.
    pub fn mean_off_lattice(&self, n: usize) -> f64 {
        let (_, h, w) = self.grid.spatial();
        let (mut sum, mut count) = (0.0, 0usize);
        for dh in 0..h {
            for dw in 0..w {
                if dh % n != 0 || dw % n != 0 {
                    sum += self.grid.data()[dh * w + dw];
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Largest entry at offsets that are multiples of `n` on both axes.
    pub fn max_on_lattice(&self, n: usize) -> f64 {
        let (_, h, w) = self.grid.spatial();
        let mut m: f64 = 0.0;
        for dh in (0..h).step_by(n) {
            for dw in (0..w).step_by(n) {
                m = m.max(self.grid.data()[dh * w + dw]);
            }
        }
        m
    }
}

/// Default tolerance for "exactly zero" heatmap entries.
pub const HEATMAP_TOL: f64 = 1e-9;

/// Feature map after layer `layer` (0 = input), upsampled to input
/// resolution, as `[C, H, W]`.
fn upsampled_features(net: &Network, x: &Tensor, layer: usize, stride: usize) -> Result<Tensor> {
    let [c, h, w] = net.spec().input;
    let batched = x.clone().reshape(vec![1, c, h, w])?;
    let f = net.forward_range(&batched, 0, layer)?;
    let single = f.index_axis0(0)?;
    upsample_nearest(&single, stride)
}

/// Exhaustive per-layer equivariance map for input `x` (`[C, H, W]`).
/// Every offset is evaluated by a direct forward pass of the shifted input.
pub fn equivariance_heatmap(net: &Network, x: &Tensor, layer: usize) -> Result<EquivarianceMap> {
    if layer > net.depth() {
        return Err(Error::Bounds(alloc::format!(
            "layer {layer} out of range 0..={}",
            net.depth()
        )));
    }
    x.expect_shape(&net.spec().input)?;
    let [_, h, w] = net.spec().input;
    let shape = net.feature_shape(layer).unwrap_or(&[]);
    let stride = net.cumulative_stride(layer);
    match *shape {
        [_, fh, fw] if fh * stride == h && fw * stride == w => {}
        _ => {
            return Err(arg_err!(
                "layer {layer} output {shape:?} is not a feature map that upsamples to {h}x{w}"
            ))
        }
    }
    let base = upsampled_features(net, x, layer, stride)?;
    let cells = par_map(h * w, |i| -> Result<f64> {
        let off = ShiftOffset::new((i / w) as i64, (i % w) as i64);
        if i == 0 {
            return Ok(0.0);
        }
        let lhs = shift_circular(&base, off)?;
        let rhs = upsampled_features(net, &shift_circular(x, off)?, layer, stride)?;
        feature_distance(&lhs, &rhs)
    });
    let grid = Tensor::new(vec![h, w], cells.into_iter().collect::<Result<Vec<_>>>()?)?;
    let period = detect_period(&grid, HEATMAP_TOL)?;
    Ok(EquivarianceMap {
        layer,
        layer_name: net
            .layers()
            .get(layer.wrapping_sub(1))
            .map_or("input", |l| l.kind_name())
            .into(),
        grid,
        stride,
        period,
        tol: HEATMAP_TOL,
    })
}

/// Smallest `N` dividing both grid extents such that every entry at offsets
/// `(a N, b N)` is `<= tol`. Falls back to `H` when nothing qualifies.
pub fn detect_period(grid: &Tensor, tol: f64) -> Result<usize> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(arg_err!("tolerance must be positive"));
    }
    if grid.rank() != 2 {
        return Err(shape_err!("period detection expects an [H, W] grid"));
    }
    let (_, h, w) = grid.spatial();
    for n in 1..=h.min(w) {
        if h % n != 0 || w % n != 0 {
            continue;
        }
        let ok = (0..h)
            .step_by(n)
            .all(|dh| (0..w).step_by(n).all(|dw| grid.data()[dh * w + dw] <= tol));
        if ok {
            return Ok(n);
        }
    }
    Ok(h)
}

/// How shifted copies of an image are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Circular shifts of the network-sized image.
    Circular,
    /// Network-sized windows cropped out of larger images, one per offset.
    Crop,
}

/// Predicted class at every circular shift of `x`, row-major in `(dh, dw)`.
pub fn predictions_for_all_shifts(net: &Network, x: &Tensor) -> Result<Vec<usize>> {
    Ok(probabilities_for_all_shifts(net, x)?
        .iter()
        .map(|p| argmax(p.data()))
        .collect())
}

/// Class probabilities (`[1, K]`) at every circular shift of `x`.
pub fn probabilities_for_all_shifts(net: &Network, x: &Tensor) -> Result<Vec<Tensor>> {
    outputs_for_all_shifts(net, x)?
        .iter()
        .map(softmax)
        .collect()
}

/// Fraction of agreeing unordered pairs among `preds`.
fn agreement(preds: &[usize], classes: usize) -> f64 {
    let m = preds.len();
    if m < 2 {
        return 1.0;
    }
    let mut counts = vec![0u64; classes.max(1)];
    for &p in preds {
        counts[p] += 1;
    }
    let agree: u64 = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    agree as f64 / ((m as u64 * (m as u64 - 1)) / 2) as f64
}

/// Probability that the network predicts the same class for two different
/// shifts of the same image, averaged over `images` (`[N, C, H, W]`).
///
/// In `Circular` mode the images have the network's input size. In `Crop`
/// mode they are larger and every network-sized window is a shift.
pub fn classification_consistency(
    net: &Network,
    images: &Tensor,
    mode: ShiftMode,
    num_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let [n, c, ih, iw] = *images.shape() else {
        return Err(shape_err!("images must be [N, C, H, W]"));
    };
    if n == 0 {
        return Err(arg_err!("no images"));
    }
    let [nc, h, w] = net.spec().input;
    if c != nc {
        return Err(shape_err!("images have {c} channels, network expects {nc}"));
    }
    let classes = net.spec().classes;
    let (gh, gw) = match mode {
        ShiftMode::Circular => {
            if (ih, iw) != (h, w) {
                return Err(shape_err!(
                    "circular mode needs {h}x{w} images, got {ih}x{iw}"
                ));
            }
            (h, w)
        }
        ShiftMode::Crop => {
            if ih < h || iw < w {
                return Err(shape_err!("crop mode needs images of at least {h}x{w}"));
            }
            (ih - h + 1, iw - w + 1)
        }
    };
    let positions = gh * gw;
    let per_image = par_map(n, |i| -> Result<f64> {
        let img = images.index_axis0(i)?;
        let predict_at = |pos: usize| -> Result<usize> {
            let off = ShiftOffset::new((pos / gw) as i64, (pos % gw) as i64);
            let view = match mode {
                ShiftMode::Circular => shift_circular(&img, off)?,
                ShiftMode::Crop => crop_shift(&img, h, w, off)?,
            };
            Ok(argmax(net.forward(&view)?.data()))
        };
        if positions <= EXHAUSTIVE_LIMIT {
            let preds = match mode {
                ShiftMode::Circular => predictions_for_all_shifts(net, &img)?,
                ShiftMode::Crop => (0..positions).map(predict_at).collect::<Result<_>>()?,
            };
            Ok(agreement(&preds, classes))
        } else {
            if num_pairs == 0 {
                return Err(arg_err!(
                    "num_pairs must be positive above {EXHAUSTIVE_LIMIT} shifts"
                ));
            }
            let mut rng =
                Pcg64::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut agree = 0usize;
            for _ in 0..num_pairs {
                let a = rng.random_range(0..positions);
                let mut b = rng.random_range(0..positions - 1);
                if b >= a {
                    b += 1;
                }
                agree += usize::from(predict_at(a)? == predict_at(b)?);
            }
            Ok(agree as f64 / num_pairs as f64)
        }
    });
    let scores = per_image.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Population standard deviation of the true-class probability over all
/// circular shifts of `x`.
pub fn classification_variation(net: &Network, x: &Tensor, true_class: usize) -> Result<f64> {
    if true_class >= net.spec().classes {
        return Err(arg_err!("class {true_class} out of range"));
    }
    let probs: Vec<f64> = probabilities_for_all_shifts(net, x)?
        .iter()
        .map(|p| p.data()[true_class])
        .collect();
    Ok(population_std(&probs))
}

pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialResult {
    pub max_shift: usize,
    pub accuracy: f64,
    /// Distinct circular positions checked per sample.
    pub positions_per_sample: usize,
}

/// Distinct residues of `-m ..= m` modulo `n`.
fn window_residues(m: usize, n: usize) -> Vec<usize> {
    if 2 * m + 1 >= n {
        return (0..n).collect();
    }
    let mut r: Vec<usize> = (-(m as i64)..=m as i64)
        .map(|d| d.rem_euclid(n as i64) as usize)
        .collect();
    r.sort_unstable();
    r
}

/// Accuracy against a shift adversary: a sample counts only if every
/// circular shift in `[-m, m]^2` is classified correctly. One result per
/// entry of `max_shifts`; predictions are computed once per sample.
pub fn adversarial_shift_curve(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    max_shifts: &[usize],
) -> Result<Vec<AdversarialResult>> {
    let n = images.shape().first().copied().unwrap_or(0);
    if images.rank() != 4 || labels.len() != n || n == 0 {
        return Err(shape_err!("need [N, C, H, W] images with one label each"));
    }
    let [_, h, w] = net.spec().input;
    let preds = par_map(n, |i| {
        predictions_for_all_shifts(net, &images.index_axis0(i)?)
    });
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(max_shifts
        .iter()
        .map(|&m| {
            let (rh, rw) = (window_residues(m, h), window_residues(m, w));
            let correct = preds
                .iter()
                .zip(labels)
                .filter(|(p, &l)| {
                    rh.iter()
                        .all(|&dh| rw.iter().all(|&dw| p[dh * w + dw] == l))
                })
                .count();
            AdversarialResult {
                max_shift: m,
                accuracy: correct as f64 / n as f64,
                positions_per_sample: rh.len() * rw.len(),
            }
        })
        .collect())
}

pub fn adversarial_shift_accuracy(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    max_shift: usize,
) -> Result<AdversarialResult> {
    Ok(adversarial_shift_curve(net, images, labels, &[max_shift])?[0])
}

/// PSNR with peak 1.0, clamped to [`PSNR_CLAMP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    b.expect_shape(a.shape())?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CLAMP_DB);
    }
    Ok((10.0 * math::log10(1.0 / mse)).min(PSNR_CLAMP_DB))
}

/// Mean PSNR between `Shift(f(x))` and `f(Shift(x))` over horizontal shifts.
pub fn psnr_stability(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    shifts: &[i64],
) -> Result<f64> {
    if shifts.is_empty() {
        return Err(arg_err!("no shifts given"));
    }
    let fx = f(x)?;
    let mut total = 0.0;
    for &dw in shifts {
        let off = ShiftOffset::new(0, dw);
        let lhs = shift_circular(&fx, off)?;
        let rhs = f(&shift_circular(x, off)?)?;
        total += psnr(&lhs, &rhs)?;
    }
    Ok(total / shifts.len() as f64)
}

/// Image total variation `x100`: per channel the sum of absolute horizontal
/// and vertical neighbour differences divided by the pixel count, averaged
/// over channels. Accepts `[H, W]` or `[C, H, W]`.
pub fn image_tv(x: &Tensor) -> Result<f64> {
    if x.rank() < 2 || x.rank() > 3 {
        return Err(shape_err!("image_tv expects [H, W] or [C, H, W]"));
    }
    let (planes, h, w) = x.spatial();
    let mut total = 0.0;
    for p in 0..planes {
        let s = &x.data()[p * h * w..(p + 1) * h * w];
        let mut tv = 0.0;
        for r in 0..h {
            for c in 0..w {
                let v = s[r * w + c];
                if c + 1 < w {
                    tv += (s[r * w + c + 1] - v).abs();
                }
                if r + 1 < h {
                    tv += (s[(r + 1) * w + c] - v).abs();
                }
            }
        }
        total += tv / (h * w) as f64;
    }
    Ok(100.0 * total / planes as f64)
}
