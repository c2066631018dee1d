//! Functional forms of every layer. Each strided kernel takes a `phase`
//! `(ph, pw)` and evaluates output `(j, i)` at dense position
//! `(j * s + ph, i * s + pw)`; the public functions use phase `(0, 0)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, shape_err};
use crate::filters::{blur_strided, blur_strided_adjoint};
use crate::tensor::{fold_plane, pad_plane, spatial_of};
use crate::{BlurKernel, PaddingMode, Result, Tensor};

pub(crate) type Phase = (usize, usize);

/// Window layout shared by max, average and convolution kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    /// Vertical / horizontal window extent (vertical is 1 for 1-D signals).
    pub kv: usize,
    pub kh: usize,
    pub sv: usize,
    pub sh: usize,
    pub phase: Phase,
    pub pad: [usize; 4],
    pub oh: usize,
    pub ow: usize,
}

impl Window {
    pub fn new(x_shape: &[usize], k: usize, s: usize, phase: Phase) -> Result<Self> {
        if k == 0 || s == 0 {
            return Err(arg_err!("window and stride must be >= 1"));
        }
        if phase.0 >= s || phase.1 >= s {
            return Err(arg_err!("phase {phase:?} must be below stride {s}"));
        }
        let (planes, h, w) = spatial_of(x_shape);
        let one_d = x_shape.len() == 1;
        let a = (k - 1) / 2;
        let b = k - 1 - a;
        let (kv, sv, pv) = if one_d {
            (1, 1, [0, 0])
        } else {
            (k, s, [a, b])
        };
        let phase = if one_d { (0, phase.1) } else { phase };
        let (oh, ow) = (h / sv, w / s);
        if oh == 0 || ow == 0 {
            return Err(shape_err!("stride {s} leaves no output on a {h}x{w} input"));
        }
        Ok(Window {
            planes,
            h,
            w,
            kv,
            kh: k,
            sv,
            sh: s,
            phase,
            pad: [pv[0], pv[1], a, b],
            oh,
            ow,
        })
    }

    pub fn pw(&self) -> usize {
        self.w + self.pad[2] + self.pad[3]
    }

    pub fn ph(&self) -> usize {
        self.h + self.pad[0] + self.pad[1]
    }

    /// Top-left padded coordinate of output `(j, i)`'s window.
    #[inline]
    pub fn origin(&self, j: usize, i: usize) -> (usize, usize) {
        (j * self.sv + self.phase.0, i * self.sh + self.phase.1)
    }
}

fn out_shape(x: &Tensor, win: &Window) -> Vec<usize> {
    x.with_spatial(win.oh, win.ow)
}

// ---------------------------------------------------------------- max

pub(crate) const NO_SOURCE: u32 = u32::MAX;

/// Windowed max. Ties go to the first element in row-major window order.
/// Returns the per-output source index within its plane (or `NO_SOURCE`
/// when a zero pad sample won).
pub(crate) fn max_window(
    x: &Tensor,
    k: usize,
    s: usize,
    pad: PaddingMode,
    phase: Phase,
) -> Result<(Tensor, Vec<u32>)> {
    let win = Window::new(x.shape(), k, s, phase)?;
    let (h, w, pw) = (win.h, win.w, win.pw());
    let rows: Vec<Option<usize>> = (0..win.ph())
        .map(|r| pad.resolve(r as isize - win.pad[0] as isize, h))
        .collect();
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|c| pad.resolve(c as isize - win.pad[2] as isize, w))
        .collect();
    let n_out = win.oh * win.ow;
    let mut out = vec![0.0; win.planes * n_out];
    let mut arg = vec![NO_SOURCE; win.planes * n_out];
    let mut padded = Vec::new();
    for p in 0..win.planes {
        pad_plane(
            &x.data()[p * h * w..(p + 1) * h * w],
            h,
            w,
            win.pad,
            pad,
            &mut padded,
        );
        if win.kv == 2 && win.kh == 2 {
            // same scan order and tie rule as the general loop below
            for j in 0..win.oh {
                let (r0, _) = win.origin(j, 0);
                let (top, bot) = (
                    &padded[r0 * pw..(r0 + 1) * pw],
                    &padded[(r0 + 1) * pw..(r0 + 2) * pw],
                );
                for i in 0..win.ow {
                    let c0 = i * win.sh + win.phase.1;
                    let cand = [top[c0], top[c0 + 1], bot[c0], bot[c0 + 1]];
                    let mut best = cand[0];
                    let mut at = 0;
                    for (t, &v) in cand.iter().enumerate().skip(1) {
                        if v > best {
                            best = v;
                            at = t;
                        }
                    }
                    let o = p * n_out + j * win.ow + i;
                    out[o] = best;
                    if let (Some(sr), Some(sc)) = (rows[r0 + at / 2], cols[c0 + at % 2]) {
                        arg[o] = (sr * w + sc) as u32;
                    }
                }
            }
            continue;
        }
        for j in 0..win.oh {
            for i in 0..win.ow {
                let (r0, c0) = win.origin(j, i);
                let mut best = padded[r0 * pw + c0];
                let mut at = (r0, c0);
                for u in 0..win.kv {
                    let row = &padded[(r0 + u) * pw..(r0 + u + 1) * pw];
                    for v in 0..win.kh {
                        let val = row[c0 + v];
                        if val > best {
                            best = val;
                            at = (r0 + u, c0 + v);
                        }
                    }
                }
                let o = p * n_out + j * win.ow + i;
                out[o] = best;
                if let (Some(sr), Some(sc)) = (rows[at.0], cols[at.1]) {
                    arg[o] = (sr * w + sc) as u32;
                }
            }
        }
    }
    Ok((Tensor::from_parts(out_shape(x, &win), out), arg))
}

pub(crate) fn max_window_backward(dy: &Tensor, in_shape: &[usize], arg: &[u32]) -> Result<Tensor> {
    if dy.len() != arg.len() {
        return Err(shape_err!("gradient does not match cached max routing"));
    }
    let (planes, h, w) = spatial_of(in_shape);
    let per_plane = dy.len() / planes;
    let mut dx = vec![0.0; planes * h * w];
    for (o, (&g, &src)) in dy.data().iter().zip(arg).enumerate() {
        if src != NO_SOURCE {
            dx[(o / per_plane) * h * w + src as usize] += g;
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

// ---------------------------------------------------------------- subsample

pub(crate) fn subsample_phase(x: &Tensor, s: usize, phase: Phase) -> Result<Tensor> {
    let win = Window::new(x.shape(), 1, s, phase)?;
    let (h, w) = (win.h, win.w);
    let mut out = Vec::with_capacity(win.planes * win.oh * win.ow);
    for p in 0..win.planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for j in 0..win.oh {
            let (r, _) = win.origin(j, 0);
            for i in 0..win.ow {
                out.push(plane[r * w + i * win.sh + win.phase.1]);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape(x, &win), out))
}

/// Adjoint of subsampling: scatter into zeros.
pub(crate) fn zero_stuff(
    dy: &Tensor,
    in_shape: &[usize],
    s: usize,
    phase: Phase,
) -> Result<Tensor> {
    let win = Window::new(in_shape, 1, s, phase)?;
    let (h, w) = (win.h, win.w);
    if dy.len() != win.planes * win.oh * win.ow {
        return Err(shape_err!(
            "gradient shape {:?} does not match stride {s}",
            dy.shape()
        ));
    }
    let mut dx = vec![0.0; win.planes * h * w];
    let mut g = dy.data().iter();
    for p in 0..win.planes {
        for j in 0..win.oh {
            let (r, _) = win.origin(j, 0);
            for i in 0..win.ow {
                dx[p * h * w + r * w + i * win.sh + win.phase.1] = *g.next().unwrap();
            }
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

// ---------------------------------------------------------------- average

pub(crate) fn avg_window(
    x: &Tensor,
    k: usize,
    s: usize,
    pad: PaddingMode,
    phase: Phase,
) -> Result<Tensor> {
    let win = Window::new(x.shape(), k, s, phase)?;
    let (h, w, pw) = (win.h, win.w, win.pw());
    let inv = 1.0 / (win.kv * win.kh) as f64;
    let mut out = Vec::with_capacity(win.planes * win.oh * win.ow);
    let mut padded = Vec::new();
    for p in 0..win.planes {
        pad_plane(
            &x.data()[p * h * w..(p + 1) * h * w],
            h,
            w,
            win.pad,
            pad,
            &mut padded,
        );
        for j in 0..win.oh {
            for i in 0..win.ow {
                let (r0, c0) = win.origin(j, i);
                let mut acc = 0.0;
                for u in 0..win.kv {
                    for v in 0..win.kh {
                        acc += padded[(r0 + u) * pw + c0 + v];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape(x, &win), out))
}

pub(crate) fn avg_window_backward(
    dy: &Tensor,
    in_shape: &[usize],
    k: usize,
    s: usize,
    pad: PaddingMode,
    phase: Phase,
) -> Result<Tensor> {
    let win = Window::new(in_shape, k, s, phase)?;
    let (h, w, pw) = (win.h, win.w, win.pw());
    if dy.len() != win.planes * win.oh * win.ow {
        return Err(shape_err!(
            "gradient shape {:?} does not match pooling",
            dy.shape()
        ));
    }
    let inv = 1.0 / (win.kv * win.kh) as f64;
    let mut dx = vec![0.0; win.planes * h * w];
    let mut dpad = vec![0.0; win.ph() * pw];
    for p in 0..win.planes {
        dpad.fill(0.0);
        for j in 0..win.oh {
            for i in 0..win.ow {
                let g = dy.data()[p * win.oh * win.ow + j * win.ow + i] * inv;
                let (r0, c0) = win.origin(j, i);
                for u in 0..win.kv {
                    for v in 0..win.kh {
                        dpad[(r0 + u) * pw + c0 + v] += g;
                    }
                }
            }
        }
        fold_plane(
            &dpad,
            h,
            w,
            win.pad,
            pad,
            &mut dx[p * h * w..(p + 1) * h * w],
        );
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

// ---------------------------------------------------------------- conv

/// Batch view `(n, c, h, w)` of a rank-3 or rank-4 feature tensor.
pub(crate) fn nchw(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err!(
            "expected [C,H,W] or [N,C,H,W], got {:?}",
            x.shape()
        )),
    }
}

/// Cached padded input planes, `[n][c_in][ph][pw]` flattened.
pub(crate) struct ConvCache {
    pub padded: Vec<f64>,
    pub win: Window,
    pub n: usize,
}

pub(crate) fn conv_forward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    s: usize,
    pad: PaddingMode,
    phase: Phase,
) -> Result<(Tensor, ConvCache)> {
    let (n, cin, h, w) = nchw(x)?;
    let [cout, wcin, k, k2] = *weights.shape() else {
        return Err(shape_err!("conv weights must be [C_out,C_in,k,k]"));
    };
    if k != k2 {
        return Err(shape_err!("conv kernel must be square, got {k}x{k2}"));
    }
    if wcin != cin {
        return Err(shape_err!("conv expects {wcin} input channels, got {cin}"));
    }
    bias.expect_shape(&[cout])?;
    let win = Window::new(&[h, w], k, s, phase)?;
    let (ph, pw) = (win.ph(), win.pw());
    let plane = ph * pw;
    let mut padded = vec![0.0; n * cin * plane];
    let mut buf = Vec::new();
    for b in 0..n * cin {
        pad_plane(
            &x.data()[b * h * w..(b + 1) * h * w],
            h,
            w,
            win.pad,
            pad,
            &mut buf,
        );
        padded[b * plane..(b + 1) * plane].copy_from_slice(&buf);
    }
    let (oh, ow) = (win.oh, win.ow);
    let mut out = vec![0.0; n * cout * oh * ow];
    let wd = weights.data();
    if s == 1 && phase == (0, 0) {
        // Accumulate on rows of the padded width so every tap is one long
        // contiguous pass; the extra columns are dropped afterwards.
        let len = (oh - 1) * pw + ow;
        let mut ext = vec![0.0; len];
        for b in 0..n {
            for co in 0..cout {
                ext.fill(bias.data()[co]);
                for ci in 0..cin {
                    let src = &padded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    if k == 3 {
                        let w9: &[f64; 9] = wd[(co * cin + ci) * 9..][..9].try_into().unwrap();
                        stencil3(&mut ext, src, pw, w9, false);
                        continue;
                    }
                    for u in 0..k {
                        for v in 0..k {
                            let wv = wd[((co * cin + ci) * k + u) * k + v];
                            let off = u * pw + v;
                            for (d, x) in ext.iter_mut().zip(&src[off..off + len]) {
                                *d += wv * x;
                            }
                        }
                    }
                }
                let dst = &mut out[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
                for j in 0..oh {
                    dst[j * ow..(j + 1) * ow].copy_from_slice(&ext[j * pw..j * pw + ow]);
                }
            }
        }
        let mut shape = vec![n, cout, oh, ow];
        if x.rank() == 3 {
            shape.remove(0);
        }
        return Ok((Tensor::from_parts(shape, out), ConvCache { padded, win, n }));
    }
    for b in 0..n {
        for co in 0..cout {
            let dst = &mut out[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
            dst.fill(bias.data()[co]);
            for ci in 0..cin {
                let src = &padded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                for u in 0..k {
                    for v in 0..k {
                        let wv = wd[((co * cin + ci) * k + u) * k + v];
                        for j in 0..oh {
                            let (r0, c0) = win.origin(j, 0);
                            let srow = &src[(r0 + u) * pw + c0 + v..];
                            let drow = &mut dst[j * ow..(j + 1) * ow];
                            if s == 1 {
                                for (d, x) in drow.iter_mut().zip(srow) {
                                    *d += wv * x;
                                }
                            } else {
                                for (i, d) in drow.iter_mut().enumerate() {
                                    *d += wv * srow[i * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut shape = vec![n, cout, oh, ow];
    if x.rank() == 3 {
        shape.remove(0);
    }
    Ok((Tensor::from_parts(shape, out), ConvCache { padded, win, n }))
}

/// Dot product over four interleaved partial sums, which lets the compiler
/// vectorize it. The summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4
        .remainder()
        .iter()
        .zip(b4.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in a4.zip(b4) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `dst[i] += sum_uv w[u][v] * src[i + u * pw + v]` for every `i` of `dst`,
/// or with `flip` the transposed stencil
/// `dst[i] += sum_uv w[u][v] * src[i + (2 - u) * pw + (2 - v)]`.
/// `src` must extend `2 * pw + 2` past `dst`.
fn stencil3(dst: &mut [f64], src: &[f64], pw: usize, w: &[f64; 9], flip: bool) {
    let len = dst.len();
    let row = |u: usize| {
        let o = if flip { (2 - u) * pw } else { u * pw };
        (
            &src[o..o + len],
            &src[o + 1..o + 1 + len],
            &src[o + 2..o + 2 + len],
        )
    };
    let tap = |u: usize, v: usize| if flip { w[u * 3 + 2 - v] } else { w[u * 3 + v] };
    let (a0, a1, a2) = row(0);
    let (b0, b1, b2) = row(1);
    let (c0, c1, c2) = row(2);
    let [wa0, wa1, wa2, wb0, wb1, wb2, wc0, wc1, wc2] = [
        tap(0, 0),
        tap(0, 1),
        tap(0, 2),
        tap(1, 0),
        tap(1, 1),
        tap(1, 2),
        tap(2, 0),
        tap(2, 1),
        tap(2, 2),
    ];
    for i in 0..len {
        let ra = wa0 * a0[i] + wa1 * a1[i] + wa2 * a2[i];
        let rb = wb0 * b0[i] + wb1 * b1[i] + wb2 * b2[i];
        let rc = wc0 * c0[i] + wc1 * c1[i] + wc2 * c2[i];
        dst[i] += ra + rb + rc;
    }
}

/// `[dot(g, r[0..]), dot(g, r[1..]), dot(g, r[2..])]` in one pass, with
/// `r.len() == g.len() + 2`.
fn dot3(g: &[f64], r: &[f64]) -> [f64; 3] {
    let n = g.len();
    let (r0, r1, r2) = (&r[..n], &r[1..n + 1], &r[2..n + 2]);
    let mut acc = [[0.0; 4]; 3];
    let body = n / 4 * 4;
    for i in (0..body).step_by(4) {
        for l in 0..4 {
            let gi = g[i + l];
            acc[0][l] += gi * r0[i + l];
            acc[1][l] += gi * r1[i + l];
            acc[2][l] += gi * r2[i + l];
        }
    }
    let mut out = [0.0; 3];
    for (t, (a, rv)) in acc.iter().zip([r0, r1, r2]).enumerate() {
        let tail: f64 = g[body..].iter().zip(&rv[body..]).map(|(x, y)| x * y).sum();
        out[t] = (a[0] + a[1]) + (a[2] + a[3]) + tail;
    }
    out
}

/// Returns `(dx, dweights, dbias)`.
pub(crate) fn conv_backward(
    dy: &Tensor,
    in_shape: &[usize],
    weights: &Tensor,
    pad: PaddingMode,
    cache: &ConvCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [cout, cin, k, _] = *weights.shape() else {
        return Err(shape_err!("conv weights must be [C_out,C_in,k,k]"));
    };
    let win = &cache.win;
    let n = cache.n;
    let (oh, ow, ph, pw, s) = (win.oh, win.ow, win.ph(), win.pw(), win.sh);
    if dy.len() != n * cout * oh * ow {
        return Err(shape_err!(
            "conv gradient shape {:?} does not match forward",
            dy.shape()
        ));
    }
    let plane = ph * pw;
    let wd = weights.data();
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; cout];
    let mut dpadded = vec![0.0; n * cin * plane];
    if s == 1 && win.phase == (0, 0) {
        let len = (oh - 1) * pw + ow;
        let mut gext = vec![0.0; len];
        // gext with 2 * pw + 2 zeros on both sides, for the 3x3 transpose
        let mut gbig = vec![0.0; if k == 3 { len + 4 * pw + 4 } else { 0 }];
        for b in 0..n {
            for (co, dbc) in db.iter_mut().enumerate() {
                let g = &dy.data()[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
                *dbc += g.iter().sum::<f64>();
                for j in 0..oh {
                    gext[j * pw..j * pw + ow].copy_from_slice(&g[j * ow..(j + 1) * ow]);
                }
                if k == 3 {
                    let m = 2 * pw + 2;
                    gbig[m..m + len].copy_from_slice(&gext);
                }
                for ci in 0..cin {
                    let src = &cache.padded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    let dsrc = &mut dpadded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    if k == 3 {
                        let base = (co * cin + ci) * 9;
                        let w9: &[f64; 9] = wd[base..base + 9].try_into().unwrap();
                        for u in 0..3 {
                            let d = dot3(&gext, &src[u * pw..u * pw + len + 2]);
                            for v in 0..3 {
                                dw[base + u * 3 + v] += d[v];
                            }
                        }
                        stencil3(dsrc, &gbig, pw, w9, true);
                        continue;
                    }
                    for u in 0..k {
                        for v in 0..k {
                            let widx = ((co * cin + ci) * k + u) * k + v;
                            let wv = wd[widx];
                            let off = u * pw + v;
                            dw[widx] += dot(&gext, &src[off..off + len]);
                            for (di, gi) in dsrc[off..off + len].iter_mut().zip(&gext) {
                                *di += wv * gi;
                            }
                        }
                    }
                }
            }
        }
    } else {
        for b in 0..n {
            for (co, dbc) in db.iter_mut().enumerate() {
                let g = &dy.data()[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
                *dbc += g.iter().sum::<f64>();
                for ci in 0..cin {
                    let src = &cache.padded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    let dsrc = &mut dpadded[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    for u in 0..k {
                        for v in 0..k {
                            let widx = ((co * cin + ci) * k + u) * k + v;
                            let wv = wd[widx];
                            let mut acc = 0.0;
                            for j in 0..oh {
                                let (r0, c0) = win.origin(j, 0);
                                let base = (r0 + u) * pw + c0 + v;
                                let grow = &g[j * ow..(j + 1) * ow];
                                if s == 1 {
                                    let srow = &src[base..base + ow];
                                    let drow = &mut dsrc[base..base + ow];
                                    for i in 0..ow {
                                        acc += grow[i] * srow[i];
                                        drow[i] += wv * grow[i];
                                    }
                                } else {
                                    for (i, gi) in grow.iter().enumerate() {
                                        acc += gi * src[base + i * s];
                                        dsrc[base + i * s] += wv * gi;
                                    }
                                }
                            }
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let (h, w) = (win.h, win.w);
    let mut dx = vec![0.0; n * cin * h * w];
    for b in 0..n * cin {
        fold_plane(
            &dpadded[b * plane..(b + 1) * plane],
            h,
            w,
            win.pad,
            pad,
            &mut dx[b * h * w..(b + 1) * h * w],
        );
    }
    Ok((
        Tensor::from_parts(in_shape.to_vec(), dx),
        Tensor::from_parts(weights.shape().to_vec(), dw),
        Tensor::from_parts(vec![cout], db),
    ))
}

// ---------------------------------------------------------------- upsample

/// Zero-stuffs by `factor` then applies the transposed (flipped-anchor)
/// blur with taps scaled by `factor`, so the DC gain is 1. Rect-2 at factor
/// 2 is nearest-neighbour upsampling, Tri-3 is linear interpolation.
pub(crate) fn blur_upsample_impl(
    x: &Tensor,
    kernel: &BlurKernel,
    factor: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    if factor < 1 {
        return Err(arg_err!("upsample factor must be >= 1"));
    }
    let taps: Vec<f64> = kernel
        .norm_taps()
        .iter()
        .map(|t| t * factor as f64)
        .collect();
    let (_, h, w) = x.spatial();
    let up_h = if x.is_1d() { 1 } else { h * factor };
    let stuffed_shape = x.with_spatial(up_h, w * factor);
    let stuffed = zero_stuff(x, &stuffed_shape, factor, (0, 0))?;
    blur_strided_adjoint(&stuffed, &stuffed_shape, &taps, pad, 1, (0, 0))
}

pub(crate) fn blur_upsample_backward(
    dy: &Tensor,
    in_shape: &[usize],
    kernel: &BlurKernel,
    factor: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    let taps: Vec<f64> = kernel
        .norm_taps()
        .iter()
        .map(|t| t * factor as f64)
        .collect();
    let dstuffed = blur_strided(dy, &taps, pad, 1, (0, 0))?;
    let picked = subsample_phase(&dstuffed, factor, (0, 0))?;
    picked.reshape(in_shape.to_vec())
}

// ---------------------------------------------------------------- public API

/// Stride-1 sliding-window max (`k x k`, or `k` taps on a 1-D signal).
pub fn max_dense(x: &Tensor, k: usize, pad: PaddingMode) -> Result<Tensor> {
    Ok(max_window(x, k, 1, pad, (0, 0))?.0)
}

/// Keeps indices congruent to 0 mod `s` on both spatial axes.
pub fn subsample(x: &Tensor, s: usize) -> Result<Tensor> {
    subsample_phase(x, s, (0, 0))
}

/// `subsample(max_dense(x, k), s)`, evaluated fused.
pub fn max_pool(x: &Tensor, k: usize, s: usize, pad: PaddingMode) -> Result<Tensor> {
    Ok(max_window(x, k, s, pad, (0, 0))?.0)
}

/// Window mean then stride. Zero padding counts toward the window size.
pub fn avg_pool(x: &Tensor, k: usize, s: usize, pad: PaddingMode) -> Result<Tensor> {
    avg_window(x, k, s, pad, (0, 0))
}

/// Fused blur + subsample: only the kept output taps are evaluated.
pub fn blur_pool(x: &Tensor, kernel: &BlurKernel, s: usize, pad: PaddingMode) -> Result<Tensor> {
    blur_strided(x, kernel.norm_taps(), pad, s, (0, 0))
}

/// Anti-aliased max pooling: dense max, then blur pool.
pub fn max_blur_pool(
    x: &Tensor,
    k: usize,
    kernel: &BlurKernel,
    s: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    blur_pool(&max_dense(x, k, pad)?, kernel, s, pad)
}

/// Cross-correlation with `weights [C_out, C_in, k, k]`, stride `s`.
/// `x` is `[C, H, W]` or `[N, C, H, W]`.
pub fn conv2d(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    s: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    Ok(conv_forward(x, weights, bias, s, pad, (0, 0))?.0)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Stride-1 convolution, ReLU, then blur pool.
pub fn conv_blur_pool(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    kernel: &BlurKernel,
    s: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    let dense = relu(&conv2d(x, weights, bias, 1, pad)?);
    blur_pool(&dense, kernel, s, pad)
}

pub fn blur_upsample(
    x: &Tensor,
    kernel: &BlurKernel,
    factor: usize,
    pad: PaddingMode,
) -> Result<Tensor> {
    blur_upsample_impl(x, kernel, factor, pad)
}
