//! Network outputs for every circular shift of one input.
//!
//! Under circular padding, a stride-1 stage maps a shifted input to the
//! shifted output, and a stride-`s` stage maps an input shifted by `d` to
//! the phase-`p` subsample of the unshifted dense map, shifted by
//! `(d + p) / s`, where `p = (-d) mod s`. So the feature map at the end of
//! the spatial trunk for any input shift is a coarse shift of one of
//! `prod(s^2)` phase branches. The branches are evaluated once each and the
//! head is then run per shift on the exactly shifted trunk output. Every
//! output element is computed with the same arithmetic as a direct forward
//! pass of the shifted input, so results are bit-identical to brute force.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{shift_circular, ShiftOffset};
use crate::{Network, PaddingMode, Result, Tensor};

/// Layers `0..trunk` are circular spatial stages; returns `None` when the
/// network does not fit the phase decomposition.
fn trunk_len(net: &Network) -> Option<usize> {
    let mut trunk = 0;
    for layer in net.layers() {
        if layer.spatial_stride().is_none() {
            break;
        }
        if matches!(layer.padding(), Some(p) if p != PaddingMode::Circular) {
            return None;
        }
        trunk += 1;
    }
    Some(trunk)
}

/// Outputs for all `H * W` circular shifts of `x` (`[C, H, W]`), in
/// row-major shift order `(dh, dw)`. Each output keeps the batch axis of
/// size 1.
pub fn outputs_for_all_shifts(net: &Network, x: &Tensor) -> Result<Vec<Tensor>> {
    let [_, h, w] = net.spec().input;
    x.expect_shape(&net.spec().input)?;
    let Some(trunk) = trunk_len(net) else {
        return brute_force(net, x, h, w);
    };
    let strides: Vec<usize> = net.layers()[..trunk]
        .iter()
        .map(|l| l.spatial_stride().unwrap_or(1))
        .collect();
    let batched = x.clone().reshape(vec![1, x.shape()[0], h, w])?;
    let mut branches = vec![batched];
    for (layer, &s) in net.layers()[..trunk].iter().zip(&strides) {
        let mut next = Vec::with_capacity(branches.len() * s * s);
        for b in &branches {
            for ph in 0..s {
                for pw in 0..s {
                    next.push(layer.forward_phase(b, (ph, pw))?.0);
                }
            }
        }
        branches = next;
    }
    let mut outs = Vec::with_capacity(h * w);
    for dh in 0..h {
        for dw in 0..w {
            let (mut rh, mut rw, mut code) = (dh, dw, 0usize);
            for &s in &strides {
                let (ph, pw) = ((s - rh % s) % s, (s - rw % s) % s);
                rh = (rh + ph) / s;
                rw = (rw + pw) / s;
                code = code * s * s + ph * s + pw;
            }
            let base = &branches[code];
            let moved = shift_circular(base, ShiftOffset::new(rh as i64, rw as i64))?;
            outs.push(net.forward_range(&moved, trunk, net.depth())?);
        }
    }
    Ok(outs)
}

fn brute_force(net: &Network, x: &Tensor, h: usize, w: usize) -> Result<Vec<Tensor>> {
    let mut outs = Vec::with_capacity(h * w);
    for dh in 0..h {
        for dw in 0..w {
            let moved = shift_circular(x, ShiftOffset::new(dh as i64, dw as i64))?;
            outs.push(net.forward(&moved)?);
        }
    }
    Ok(outs)
}

/// Direct evaluation of every shifted input; the reference for
/// [`outputs_for_all_shifts`].
pub fn outputs_for_all_shifts_direct(net: &Network, x: &Tensor) -> Result<Vec<Tensor>> {
    let [_, h, w] = net.spec().input;
    x.expect_shape(&net.spec().input)?;
    brute_force(net, x, h, w)
}

/// Whether [`outputs_for_all_shifts`] can use the phase decomposition.
pub fn supports_phase_sweep(net: &Network) -> bool {
    trunk_len(net).is_some()
}
