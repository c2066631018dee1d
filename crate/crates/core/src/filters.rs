//! Binomial anti-aliasing kernels and their depthwise separable application.
//!
//! Alignment: a kernel of length `m` reads inputs `i - a .. i - a + m` with
//! `a = (m - 1) / 2`. Odd kernels are centred; even kernels lean right, so
//! `Rect-2` at `i` averages `x[i]` and `x[i + 1]`. Together with phase-0
//! subsampling this is the alignment that reproduces the classic 1-D max/blur
//! pooling example exactly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::arg_err;
use crate::tensor::{fold_plane, pad_plane, shape_with_spatial, spatial_of};
use crate::{Error, PaddingMode, Result, Tensor};

/// Supported kernels. The number is the tap count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KernelName {
    Delta1,
    Rect2,
    Tri3,
    Bin4,
    Bin5,
    Bin6,
    Bin7,
}

impl KernelName {
    pub const ALL: [KernelName; 7] = [
        KernelName::Delta1,
        KernelName::Rect2,
        KernelName::Tri3,
        KernelName::Bin4,
        KernelName::Bin5,
        KernelName::Bin6,
        KernelName::Bin7,
    ];

    pub fn size(self) -> usize {
        self as usize + 1
    }

    /// Short flag spelling, e.g. `tri3`.
    pub fn flag(self) -> &'static str {
        match self {
            KernelName::Delta1 => "delta1",
            KernelName::Rect2 => "rect2",
            KernelName::Tri3 => "tri3",
            KernelName::Bin4 => "bin4",
            KernelName::Bin5 => "bin5",
            KernelName::Bin6 => "bin6",
            KernelName::Bin7 => "bin7",
        }
    }
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelName::Delta1 => "Delta-1",
            KernelName::Rect2 => "Rect-2",
            KernelName::Tri3 => "Tri-3",
            KernelName::Bin4 => "Bin-4",
            KernelName::Bin5 => "Bin-5",
            KernelName::Bin6 => "Bin-6",
            KernelName::Bin7 => "Bin-7",
        })
    }
}

impl FromStr for KernelName {
    type Err = Error;

    /// Accepts both `Tri-3` and `tri3` spellings, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        KernelName::ALL
            .into_iter()
            .find(|k| k.flag() == key)
            .ok_or_else(|| arg_err!("unknown blur kernel {s:?}"))
    }
}

/// A named 1-D tap vector and its normalized form. The 2-D filter is the
/// outer product of `norm_taps` with itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    name: KernelName,
    taps: Vec<f64>,
    norm_taps: Vec<f64>,
}

/// Builds the kernel whose taps are row `m - 1` of Pascal's triangle.
pub fn make_kernel(name: KernelName) -> BlurKernel {
    let m = name.size();
    let mut taps = vec![1.0f64; m];
    // C(n, i) by the multiplicative recurrence; exact in f64 for n <= 6.
    let n = (m - 1) as f64;
    for i in 1..m {
        taps[i] = taps[i - 1] * (n - (i - 1) as f64) / i as f64;
    }
    let total: f64 = taps.iter().sum();
    let norm_taps = taps.iter().map(|t| t / total).collect();
    BlurKernel {
        name,
        taps,
        norm_taps,
    }
}

impl BlurKernel {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(make_kernel(name.parse()?))
    }

    pub fn name(&self) -> KernelName {
        self.name
    }

    pub fn size(&self) -> usize {
        self.taps.len()
    }

    /// Unnormalized integer pattern.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn norm_taps(&self) -> &[f64] {
        &self.norm_taps
    }

    /// Index of the tap that lands on the output position.
    pub fn anchor(&self) -> usize {
        (self.size() - 1) / 2
    }

    /// `[m, m]` outer product of the normalized taps.
    pub fn kernel_2d(&self) -> Tensor {
        let m = self.size();
        let t = &self.norm_taps;
        Tensor::from_fn(vec![m, m], |i| t[i / m] * t[i % m])
    }
}

/// Depthwise blur with the separable 2-D kernel: each plane independently,
/// vertical pass then horizontal pass. Rank-1 signals are filtered along W
/// only.
pub fn apply_blur(x: &Tensor, k: &BlurKernel, pad: PaddingMode) -> Result<Tensor> {
    blur_strided(x, k.norm_taps(), pad, 1, (0, 0))
}

/// Blur evaluated only at output positions `(j * stride + phase)`. With
/// `stride == 1` this is [`apply_blur`]; otherwise it is the fused
/// blur-then-subsample.
pub(crate) fn blur_strided(
    x: &Tensor,
    taps: &[f64],
    pad: PaddingMode,
    stride: usize,
    phase: (usize, usize),
) -> Result<Tensor> {
    let geo = BlurGeometry::new(x.shape(), taps.len(), stride, phase)?;
    let mut out = vec![0.0; geo.planes * geo.oh * geo.ow];
    let mut padded = Vec::new();
    let mut rows = vec![0.0; geo.oh * geo.pw];
    let (h, w) = (geo.h, geo.w);
    for p in 0..geo.planes {
        pad_plane(
            &x.data()[p * h * w..(p + 1) * h * w],
            h,
            w,
            geo.pad,
            pad,
            &mut padded,
        );
        // vertical: rows[j][c] = sum_t taps_v[t] * padded[rj + t][c]
        rows.fill(0.0);
        for j in 0..geo.oh {
            let dst = &mut rows[j * geo.pw..(j + 1) * geo.pw];
            let r0 = j * geo.sv + geo.phase_v;
            for (t, &tap) in geo.taps_v(taps).iter().enumerate() {
                let src = &padded[(r0 + t) * geo.pw..(r0 + t + 1) * geo.pw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += tap * s;
                }
            }
        }
        // horizontal: out[j][i] = sum_t taps[t] * rows[j][i * s + phase + t]
        let dst = &mut out[p * geo.oh * geo.ow..(p + 1) * geo.oh * geo.ow];
        for j in 0..geo.oh {
            let row = &rows[j * geo.pw..(j + 1) * geo.pw];
            for i in 0..geo.ow {
                let c0 = i * stride + phase.1;
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    acc += tap * row[c0 + t];
                }
                dst[j * geo.ow + i] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(x.with_spatial(geo.oh, geo.ow), out))
}

/// Adjoint of [`blur_strided`] with respect to its input.
pub(crate) fn blur_strided_adjoint(
    dy: &Tensor,
    in_shape: &[usize],
    taps: &[f64],
    pad: PaddingMode,
    stride: usize,
    phase: (usize, usize),
) -> Result<Tensor> {
    let geo = BlurGeometry::new(in_shape, taps.len(), stride, phase)?;
    dy.expect_shape(&shape_with_spatial(in_shape, geo.oh, geo.ow))?;
    let (h, w) = (geo.h, geo.w);
    let mut dx = vec![0.0; geo.planes * h * w];
    let mut dpadded = vec![0.0; (h + geo.pad[0] + geo.pad[1]) * geo.pw];
    let mut drows = vec![0.0; geo.oh * geo.pw];
    for p in 0..geo.planes {
        let g = &dy.data()[p * geo.oh * geo.ow..(p + 1) * geo.oh * geo.ow];
        drows.fill(0.0);
        for j in 0..geo.oh {
            let row = &mut drows[j * geo.pw..(j + 1) * geo.pw];
            for i in 0..geo.ow {
                let c0 = i * stride + phase.1;
                let gi = g[j * geo.ow + i];
                for (t, &tap) in taps.iter().enumerate() {
                    row[c0 + t] += tap * gi;
                }
            }
        }
        dpadded.fill(0.0);
        for j in 0..geo.oh {
            let src = &drows[j * geo.pw..(j + 1) * geo.pw];
            let r0 = j * geo.sv + geo.phase_v;
            for (t, &tap) in geo.taps_v(taps).iter().enumerate() {
                let dst = &mut dpadded[(r0 + t) * geo.pw..(r0 + t + 1) * geo.pw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += tap * s;
                }
            }
        }
        fold_plane(
            &dpadded,
            h,
            w,
            geo.pad,
            pad,
            &mut dx[p * h * w..(p + 1) * h * w],
        );
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

struct BlurGeometry {
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pw: usize,
    pad: [usize; 4],
    sv: usize,
    phase_v: usize,
    one_d: bool,
}

const IDENTITY_TAP: [f64; 1] = [1.0];

impl BlurGeometry {
    fn new(shape: &[usize], m: usize, stride: usize, phase: (usize, usize)) -> Result<Self> {
        if stride == 0 || m == 0 {
            return Err(arg_err!("stride and kernel size must be >= 1"));
        }
        if phase.0 >= stride || phase.1 >= stride {
            return Err(arg_err!("phase {phase:?} must be below stride {stride}"));
        }
        let (planes, h, w) = spatial_of(shape);
        let one_d = shape.len() == 1;
        let a = (m - 1) / 2;
        let b = m - 1 - a;
        let (top, bottom) = if one_d { (0, 0) } else { (a, b) };
        let sv = if one_d { 1 } else { stride };
        let phase_v = if one_d { 0 } else { phase.0 };
        let oh = if one_d { 1 } else { h / stride };
        let ow = w / stride;
        if oh == 0 || ow == 0 {
            return Err(crate::error::shape_err!(
                "stride {stride} leaves no output on a {h}x{w} input"
            ));
        }
        Ok(BlurGeometry {
            planes,
            h,
            w,
            oh,
            ow,
            pw: w + a + b,
            pad: [top, bottom, a, b],
            sv,
            phase_v,
            one_d,
        })
    }

    fn taps_v<'a>(&self, taps: &'a [f64]) -> &'a [f64] {
        if self.one_d {
            &IDENTITY_TAP
        } else {
            taps
        }
    }
}

/// Mean normalized total variation over all 2-D slices of a weight tensor
/// (any rank >= 2; the last two axes are the filter window).
///
/// Per slice: `(sum |horizontal diffs| + sum |vertical diffs|) / sum |w|`,
/// and 0 for an all-zero slice. Lower means smoother.
pub fn filter_tv(weights: &Tensor) -> f64 {
    let (planes, h, w) = weights.spatial();
    let mut total = 0.0;
    for p in 0..planes {
        let s = &weights.data()[p * h * w..(p + 1) * h * w];
        let l1: f64 = s.iter().map(|v| v.abs()).sum();
        if l1 == 0.0 {
            continue;
        }
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
        total += tv / l1;
    }
    total / planes as f64
}
