//! Dense row-major `f64` tensors and the circular shift semantics every
//! equivariance claim in this crate is stated against.
//!
//! Shapes are interpreted by rank: `[W]`, `[H, W]`, `[C, H, W]` or
//! `[N, C, H, W]`. The last two axes are always spatial, except for rank 1
//! where the single axis is a 1-D signal along W.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{arg_err, shape_err};
use crate::{Error, Result};

/// Boundary handling for windowed operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PaddingMode {
    /// Indices wrap modulo the extent. Every stride-1 operator is exactly
    /// shift-equivariant under this mode.
    #[default]
    Circular,
    Zero,
    /// Mirror without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
    Reflect,
}

impl PaddingMode {
    /// Maps a possibly out-of-range index onto `0..n`, or `None` when the
    /// sample is an implicit zero.
    #[inline]
    pub fn resolve(self, i: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        match self {
            PaddingMode::Circular => Some(i.rem_euclid(n_i) as usize),
            PaddingMode::Zero => (0..n_i).contains(&i).then_some(i as usize),
            PaddingMode::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n_i - 1);
                let m = i.rem_euclid(period);
                Some(if m >= n_i { period - m } else { m } as usize)
            }
        }
    }
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaddingMode::Circular => "circular",
            PaddingMode::Zero => "zero",
            PaddingMode::Reflect => "reflect",
        })
    }
}

impl core::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "circular" => Ok(PaddingMode::Circular),
            "zero" => Ok(PaddingMode::Zero),
            "reflect" => Ok(PaddingMode::Reflect),
            _ => Err(arg_err!("unknown padding mode {s:?}")),
        }
    }
}

/// Integer pixel offset `(dh, dw)`. Any value is allowed; circular consumers
/// reduce it modulo the spatial extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftOffset {
    pub dh: i64,
    pub dw: i64,
}

impl ShiftOffset {
    pub const ZERO: ShiftOffset = ShiftOffset { dh: 0, dw: 0 };

    pub const fn new(dh: i64, dw: i64) -> Self {
        ShiftOffset { dh, dw }
    }

    /// Offset reduced into `[0, h) x [0, w)`.
    pub fn reduced(self, h: usize, w: usize) -> (usize, usize) {
        (
            self.dh.rem_euclid(h as i64) as usize,
            self.dw.rem_euclid(w as i64) as usize,
        )
    }
}

impl core::ops::Add for ShiftOffset {
    type Output = ShiftOffset;
    fn add(self, rhs: ShiftOffset) -> ShiftOffset {
        ShiftOffset::new(self.dh + rhs.dh, self.dw + rhs.dw)
    }
}

impl core::ops::Neg for ShiftOffset {
    type Output = ShiftOffset;
    fn neg(self) -> ShiftOffset {
        ShiftOffset::new(-self.dh, -self.dw)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.len() > 4 {
            return Err(shape_err!("rank must be 1..=4, got {}", shape.len()));
        }
        if shape.contains(&0) {
            return Err(shape_err!("zero extent in {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![value; n])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::from_parts(shape, (0..n).map(&mut f).collect())
    }

    /// 1-D signal.
    pub fn from_slice(values: &[f64]) -> Self {
        Tensor::from_parts(vec![values.len()], values.to_vec())
    }

    /// `[H, W]` tensor from rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(h * w);
        for r in rows {
            if r.as_ref().len() != w {
                return Err(shape_err!("ragged rows"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Tensor::new(vec![h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// `(planes, H, W)`: the number of independent 2-D planes and their
    /// extent. A rank-1 signal is a single `1 x W` plane.
    pub fn spatial(&self) -> (usize, usize, usize) {
        spatial_of(&self.shape)
    }

    /// Shape with the two spatial extents replaced.
    pub(crate) fn with_spatial(&self, h: usize, w: usize) -> Vec<usize> {
        shape_with_spatial(&self.shape, h, w)
    }

    pub fn is_1d(&self) -> bool {
        self.rank() == 1
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.rank() {
            return None;
        }
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return None;
            }
            flat = flat * n + i;
        }
        Some(self.data[flat])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape())?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err!("expected shape {shape:?}, got {:?}", self.shape));
        }
        Ok(())
    }

    /// Leading-axis slice `self[i]` of a rank >= 2 tensor.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(shape_err!("index_axis0 needs rank >= 2"));
        }
        if i >= self.shape[0] {
            return Err(Error::Bounds(alloc::format!(
                "index {i} on axis of length {}",
                self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor::from_parts(
            self.shape[1..].to_vec(),
            self.data[i * inner..(i + 1) * inner].to_vec(),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        if first.rank() >= 4 {
            return Err(shape_err!("stacking would exceed rank 4"));
        }
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            t.expect_shape(first.shape())?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }
}

fn require_spatial(x: &Tensor) -> Result<()> {
    if x.rank() < 2 {
        return Err(shape_err!(
            "operation needs the last two axes to be spatial, got rank {}",
            x.rank()
        ));
    }
    Ok(())
}

/// Circular shift: `out[h, w] = x[(h - dh) mod H, (w - dw) mod W]` on every
/// plane.
pub fn shift_circular(x: &Tensor, off: ShiftOffset) -> Result<Tensor> {
    require_spatial(x)?;
    let (planes, h, w) = x.spatial();
    let (dh, dw) = off.reduced(h, w);
    if dh == 0 && dw == 0 {
        return Ok(x.clone());
    }
    let mut out = vec![0.0; x.len()];
    let hw = h * w;
    for p in 0..planes {
        let src = &x.data[p * hw..(p + 1) * hw];
        let dst = &mut out[p * hw..(p + 1) * hw];
        for r in 0..h {
            let sr = (r + h - dh) % h;
            let srow = &src[sr * w..(sr + 1) * w];
            let drow = &mut dst[r * w..(r + 1) * w];
            // drow[c] = srow[(c - dw) mod w]
            drow[dw..].copy_from_slice(&srow[..w - dw]);
            drow[..dw].copy_from_slice(&srow[w - dw..]);
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

/// 1-D circular shift of a rank-1 signal, `out[i] = x[(i - d) mod n]`.
pub fn shift_circular_1d(x: &Tensor, d: i64) -> Result<Tensor> {
    if !x.is_1d() {
        return Err(shape_err!("expected a rank-1 signal"));
    }
    let as_row = Tensor::from_parts(vec![1, x.len()], x.data.clone());
    let shifted = shift_circular(&as_row, ShiftOffset::new(0, d))?;
    Ok(Tensor::from_parts(x.shape.clone(), shifted.data))
}

/// Window of size `win_h x win_w` starting at `(off.dh, off.dw)`. Never pads.
pub fn crop_shift(x: &Tensor, win_h: usize, win_w: usize, off: ShiftOffset) -> Result<Tensor> {
    require_spatial(x)?;
    let (planes, h, w) = x.spatial();
    if win_h == 0 || win_w == 0 {
        return Err(Error::Bounds("empty crop window".into()));
    }
    let fits = |o: i64, win: usize, n: usize| o >= 0 && (o as usize) + win <= n;
    if !fits(off.dh, win_h, h) || !fits(off.dw, win_w, w) {
        return Err(Error::Bounds(alloc::format!(
            "{win_h}x{win_w} window at ({}, {}) exceeds {h}x{w}",
            off.dh,
            off.dw
        )));
    }
    let (oh, ow) = (off.dh as usize, off.dw as usize);
    let mut out = Vec::with_capacity(planes * win_h * win_w);
    for p in 0..planes {
        let plane = &x.data[p * h * w..(p + 1) * h * w];
        for r in oh..oh + win_h {
            out.extend_from_slice(&plane[r * w + ow..r * w + ow + win_w]);
        }
    }
    Ok(Tensor::from_parts(x.with_spatial(win_h, win_w), out))
}

/// Replicates every pixel into a `factor x factor` block (along W only for a
/// rank-1 signal).
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(arg_err!("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (planes, h, w) = x.spatial();
    let fh = if x.is_1d() { 1 } else { factor };
    let (oh, ow) = (h * fh, w * factor);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut row = Vec::with_capacity(ow);
    for p in 0..planes {
        let plane = &x.data[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            row.clear();
            for &v in &plane[r * w..(r + 1) * w] {
                row.extend(core::iter::repeat_n(v, factor));
            }
            for _ in 0..fh {
                out.extend_from_slice(&row);
            }
        }
    }
    Ok(Tensor::from_parts(x.with_spatial(oh, ow), out))
}

/// Copies one `h x w` plane into a padded buffer. Row `r`, column `c` of the
/// result holds the source sample at `(r - top, c - left)` resolved by `mode`.
/// `(planes, H, W)` view of a shape; rank 1 is a single row.
pub(crate) fn spatial_of(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [w] => (1, 1, *w),
        [lead @ .., h, w] => (lead.iter().product(), *h, *w),
        [] => (1, 1, 1),
    }
}

pub(crate) fn shape_with_spatial(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.len() {
        1 => s[0] = w,
        r => {
            s[r - 2] = h;
            s[r - 1] = w;
        }
    }
    s
}

pub(crate) fn pad_plane(
    src: &[f64],
    h: usize,
    w: usize,
    pad: [usize; 4],
    mode: PaddingMode,
    out: &mut Vec<f64>,
) {
    let [top, bottom, left, right] = pad;
    let pw = w + left + right;
    out.clear();
    out.resize((h + top + bottom) * pw, 0.0);
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|c| mode.resolve(c as isize - left as isize, w))
        .collect();
    for r in 0..h + top + bottom {
        let Some(sr) = mode.resolve(r as isize - top as isize, h) else {
            continue;
        };
        let srow = &src[sr * w..(sr + 1) * w];
        let drow = &mut out[r * pw..(r + 1) * pw];
        drow[left..left + w].copy_from_slice(srow);
        for c in (0..left).chain(left + w..pw) {
            if let Some(sc) = cols[c] {
                drow[c] = srow[sc];
            }
        }
    }
}

/// Adjoint of [`pad_plane`]: accumulates a padded-buffer gradient back onto
/// the source plane.
pub(crate) fn fold_plane(
    padded: &[f64],
    h: usize,
    w: usize,
    pad: [usize; 4],
    mode: PaddingMode,
    dst: &mut [f64],
) {
    let [top, bottom, left, right] = pad;
    let pw = w + left + right;
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|c| mode.resolve(c as isize - left as isize, w))
        .collect();
    for r in 0..h + top + bottom {
        let Some(sr) = mode.resolve(r as isize - top as isize, h) else {
            continue;
        };
        let prow = &padded[r * pw..(r + 1) * pw];
        let drow = &mut dst[sr * w..(sr + 1) * w];
        for (c, col) in cols.iter().enumerate() {
            if let Some(sc) = col {
                drow[*sc] += prow[c];
            }
        }
    }
}
