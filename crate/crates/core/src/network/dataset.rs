//! Procedural glyph classification task on a 32x32 canvas.
//!
//! Each sample is one glyph of random size, stroke intensity and position on
//! a noisy background. The label is the glyph's shape, so the task is
//! translation invariant by construction, and every glyph lies fully inside
//! the canvas so circular shifts never cut it apart semantically.
//!
//! Background noise is uniform and centered on zero. The nets have no
//! normalization layers, and an offset input makes plain SGD far less stable.

use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::error::arg_err;
use crate::{Result, Tensor};

pub const CANVAS: usize = 32;
/// Background noise spans `[-NOISE / 2, NOISE / 2)`.
const NOISE: f64 = 0.7;
/// Stroke intensity is drawn from `[INK_MIN, 1)` before centering.
const INK_MIN: f64 = 0.5;
/// Stroke width of the outline glyphs, in pixels.
const STROKE: usize = 2;

/// Glyph shapes, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    FilledSquare,
    HollowSquare,
    Cross,
    DiagonalBar,
    Saltire,
    HorizontalBars,
    VerticalBars,
    Ring,
}

impl Glyph {
    pub const ALL: [Glyph; 8] = [
        Glyph::FilledSquare,
        Glyph::HollowSquare,
        Glyph::Cross,
        Glyph::DiagonalBar,
        Glyph::Saltire,
        Glyph::HorizontalBars,
        Glyph::VerticalBars,
        Glyph::Ring,
    ];

    /// Whether cell `(r, c)` of a `size x size` box is inked.
    fn covers(self, r: usize, c: usize, size: usize) -> bool {
        let last = size - 1;
        let sw = STROKE;
        let mid = (size - sw) / 2;
        let (ri, ci) = (r as isize, c as isize);
        match self {
            Glyph::FilledSquare => true,
            Glyph::HollowSquare => r < sw || c < sw || r + sw > last || c + sw > last,
            Glyph::Cross => (mid..mid + sw).contains(&r) || (mid..mid + sw).contains(&c),
            Glyph::DiagonalBar => (0..sw as isize).contains(&(ri - ci)),
            Glyph::Saltire => (ri - ci).abs() <= 1 || (ri + ci - last as isize).abs() <= 1,
            Glyph::HorizontalBars => r % 4 < 2,
            Glyph::VerticalBars => c % 4 < 2,
            Glyph::Ring => {
                let rad = last as f64 / 2.0;
                let (dr, dc) = (r as f64 - rad, c as f64 - rad);
                let d = crate::math::sqrt(dr * dr + dc * dc);
                d <= rad + 0.25 && d >= rad - 1.75
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    /// `[N, 1, 32, 32]`, values in `[-NOISE / 2, 1 - NOISE / 2)`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sample `i` as `[1, 32, 32]`.
    pub fn image(&self, i: usize) -> Tensor {
        self.images.index_axis0(i).expect("sample index in range")
    }

    /// Stacks the listed samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = CANVAS * CANVAS;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        (
            Tensor::from_parts(vec![indices.len(), 1, CANVAS, CANVAS], data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// `n` samples over the first `num_classes` glyphs; sample `i` has label
/// `i % num_classes`.
pub fn toy_dataset(seed: u64, n: usize, num_classes: usize) -> Result<ToyDataset> {
    if num_classes == 0 || num_classes > Glyph::ALL.len() {
        return Err(arg_err!("num_classes must be in 1..={}", Glyph::ALL.len()));
    }
    if n < num_classes {
        return Err(arg_err!(
            "need at least one sample per class ({n} < {num_classes})"
        ));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let per = CANVAS * CANVAS;
    let mut data = vec![0.0; n * per];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % num_classes;
        let glyph = Glyph::ALL[label];
        let size = rng.random_range(8..=14usize);
        let ink = rng.random_range(INK_MIN..1.0);
        let top = rng.random_range(0..=CANVAS - size);
        let left = rng.random_range(0..=CANVAS - size);
        let img = &mut data[i * per..(i + 1) * per];
        for v in img.iter_mut() {
            *v = rng.random_range(0.0..NOISE);
        }
        for r in 0..size {
            for c in 0..size {
                if glyph.covers(r, c, size) {
                    img[(top + r) * CANVAS + left + c] = ink;
                }
            }
        }
        for v in img.iter_mut() {
            *v -= NOISE / 2.0;
        }
        labels.push(label);
    }
    Ok(ToyDataset {
        images: Tensor::from_parts(vec![n, 1, CANVAS, CANVAS], data),
        labels,
        num_classes,
        seed,
    })
}

/// Accuracy on `test` of the classifier that assigns each image to the
/// class whose mean training image is closest in Euclidean distance.
pub fn nearest_centroid_accuracy(train: &ToyDataset, test: &ToyDataset) -> f64 {
    let per = CANVAS * CANVAS;
    let k = train.num_classes;
    let mut centroids = vec![0.0; k * per];
    let counts = train.class_counts();
    for (i, &l) in train.labels.iter().enumerate() {
        let img = &train.images.data()[i * per..(i + 1) * per];
        for (c, v) in centroids[l * per..(l + 1) * per].iter_mut().zip(img) {
            *c += v / counts[l] as f64;
        }
    }
    let correct = test
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let img = &test.images.data()[i * per..(i + 1) * per];
            let dist = |c: usize| -> f64 {
                centroids[c * per..(c + 1) * per]
                    .iter()
                    .zip(img)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            };
            let mut best = 0;
            for c in 1..k {
                if dist(c) < dist(best) {
                    best = c;
                }
            }
            best == l
        })
        .count();
    correct as f64 / test.len() as f64
}
