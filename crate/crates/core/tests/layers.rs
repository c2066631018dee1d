use bplab_core::layers::{
    avg_pool, blur_pool, blur_upsample, conv2d, conv_blur_pool, max_blur_pool, max_dense, max_pool,
    relu, subsample, ConvParams,
};
use bplab_core::tensor::{shift_circular, upsample_nearest};
use bplab_core::{filters, BlurKernel, KernelName, Layer, PaddingMode, ShiftOffset, Tensor};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

const PADS: [PaddingMode; 3] = [
    PaddingMode::Circular,
    PaddingMode::Zero,
    PaddingMode::Reflect,
];

fn random(rng: &mut Pcg64, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn kernel(name: KernelName) -> BlurKernel {
    filters::make_kernel(name)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `<r, layer(x)>` against the analytic backward
/// pass, for the input and (when present) both parameter tensors.
fn check_layer(layer: &Layer, x: &Tensor, rng: &mut Pcg64) -> f64 {
    const H: f64 = 1e-6;
    let (y, cache) = layer.forward(x).unwrap();
    let r = random(rng, y.shape());
    let (dx, pg) = layer.backward(&cache, &r).unwrap();
    let objective = |l: &Layer, x: &Tensor| dot(&r, &l.forward(x).unwrap().0);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut d = x.clone().into_data();
        d[i] += H;
        let plus = objective(layer, &Tensor::new(x.shape().to_vec(), d.clone()).unwrap());
        d[i] -= 2.0 * H;
        let minus = objective(layer, &Tensor::new(x.shape().to_vec(), d).unwrap());
        worst = worst.max(rel_err((plus - minus) / (2.0 * H), dx.data()[i]));
    }
    if let Some(pg) = pg {
        for (which, analytic) in [(0, &pg.weights), (1, &pg.bias)] {
            for i in 0..analytic.len() {
                let numeric = {
                    let eval = |delta: f64| {
                        let mut l = layer.clone();
                        let (w, b) = l.params_mut().unwrap();
                        let p = if which == 0 { w } else { b };
                        let mut d = p.clone().into_data();
                        d[i] += delta;
                        *p = Tensor::new(p.shape().to_vec(), d).unwrap();
                        objective(&l, x)
                    };
                    (eval(H) - eval(-H)) / (2.0 * H)
                };
                worst = worst.max(rel_err(numeric, analytic.data()[i]));
            }
        }
    }
    worst
}

fn conv_params(rng: &mut Pcg64, cout: usize, cin: usize, k: usize) -> ConvParams {
    ConvParams::new(random(rng, &[cout, cin, k, k]), random(rng, &[cout])).unwrap()
}

fn every_layer(rng: &mut Pcg64, pad: PaddingMode) -> Vec<Layer> {
    let tri = kernel(KernelName::Tri3);
    let bin = kernel(KernelName::Bin5);
    vec![
        Layer::Conv2d {
            params: conv_params(rng, 3, 2, 3),
            stride: 1,
            pad,
        },
        Layer::Conv2d {
            params: conv_params(rng, 2, 2, 3),
            stride: 2,
            pad,
        },
        Layer::Relu,
        Layer::Sigmoid,
        Layer::MaxDense { k: 2, pad },
        Layer::MaxDense { k: 3, pad },
        Layer::Subsample { s: 2 },
        Layer::MaxPool { k: 2, s: 2, pad },
        Layer::AvgPool { k: 2, s: 2, pad },
        Layer::AvgPool { k: 3, s: 2, pad },
        Layer::BlurPool {
            kernel: bin.clone(),
            s: 2,
            pad,
        },
        Layer::BlurPool {
            kernel: kernel(KernelName::Bin4),
            s: 2,
            pad,
        },
        Layer::MaxBlurPool {
            k: 2,
            kernel: tri.clone(),
            s: 2,
            pad,
            swapped: false,
        },
        Layer::MaxBlurPool {
            k: 2,
            kernel: tri.clone(),
            s: 2,
            pad,
            swapped: true,
        },
        Layer::ConvBlurPool {
            params: conv_params(rng, 2, 2, 3),
            kernel: tri.clone(),
            s: 2,
            pad,
        },
        Layer::BlurUpsample {
            kernel: tri,
            factor: 2,
            pad,
        },
        Layer::BlurUpsample {
            kernel: bin,
            factor: 2,
            pad,
        },
        Layer::GlobalAvgPool,
        Layer::Flatten,
    ]
}

#[test]
fn every_layer_backward_matches_finite_differences() {
    let mut rng = Pcg64::seed_from_u64(11);
    for pad in PADS {
        for layer in every_layer(&mut rng, pad) {
            let x = random(&mut rng, &[2, 2, 6, 8]);
            let err = check_layer(&layer, &x, &mut rng);
            assert!(
                err < 1e-4,
                "{} ({pad}): relative error {err:e}",
                layer.kind_name()
            );
        }
    }
    let linear = Layer::Linear {
        weights: random(&mut rng, &[3, 5]),
        bias: random(&mut rng, &[3]),
    };
    let x = random(&mut rng, &[4, 5]);
    assert!(check_layer(&linear, &x, &mut rng) < 1e-4);
}

#[test]
fn max_pool_is_subsampled_dense_max_bit_identically() {
    let mut rng = Pcg64::seed_from_u64(1);
    for pad in PADS {
        for _ in 0..20 {
            let x = random(&mut rng, &[2, 3, 8, 12]);
            let dense = max_dense(&x, 2, pad).unwrap();
            assert_eq!(
                max_pool(&x, 2, 2, pad).unwrap(),
                subsample(&dense, 2).unwrap()
            );
        }
    }
}

#[test]
fn delta_blur_max_pool_equals_max_pool_bit_identically() {
    let mut rng = Pcg64::seed_from_u64(2);
    let delta = kernel(KernelName::Delta1);
    for _ in 0..100 {
        let x = random(&mut rng, &[1, 2, 16, 16]);
        let a = max_blur_pool(&x, 2, &delta, 2, PaddingMode::Circular).unwrap();
        assert_eq!(a, max_pool(&x, 2, 2, PaddingMode::Circular).unwrap());
    }
}

#[test]
fn box_blur_pool_equals_average_pool() {
    let mut rng = Pcg64::seed_from_u64(3);
    let rect = kernel(KernelName::Rect2);
    for pad in PADS {
        for _ in 0..100 {
            let x = random(&mut rng, &[1, 2, 8, 8]);
            let a = blur_pool(&x, &rect, 2, pad).unwrap();
            let b = avg_pool(&x, 2, 2, pad).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }
}

#[test]
fn fused_blur_pool_equals_blur_then_subsample() {
    let mut rng = Pcg64::seed_from_u64(4);
    for name in KernelName::ALL {
        let k = kernel(name);
        for pad in PADS {
            for _ in 0..100 / KernelName::ALL.len() + 1 {
                let x = random(&mut rng, &[1, 2, 12, 12]);
                let fused = blur_pool(&x, &k, 2, pad).unwrap();
                let unfused = subsample(&filters::apply_blur(&x, &k, pad).unwrap(), 2).unwrap();
                assert!(fused.max_abs_diff(&unfused) <= 1e-12, "{name} {pad}");
            }
        }
    }
}

#[test]
fn conv_blur_pool_with_delta_is_strided_conv() {
    let mut rng = Pcg64::seed_from_u64(5);
    let p = conv_params(&mut rng, 3, 2, 3);
    let x = random(&mut rng, &[2, 2, 8, 8]);
    let delta = kernel(KernelName::Delta1);
    for pad in PADS {
        let a = conv_blur_pool(&x, &p.weights, &p.bias, &delta, 2, pad).unwrap();
        let b = relu(&conv2d(&x, &p.weights, &p.bias, 2, pad).unwrap());
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}

#[test]
fn circular_conv_commutes_with_every_shift() {
    let mut rng = Pcg64::seed_from_u64(6);
    let p = conv_params(&mut rng, 4, 3, 3);
    let x = random(&mut rng, &[3, 7, 9]);
    let y = conv2d(&x, &p.weights, &p.bias, 1, PaddingMode::Circular).unwrap();
    for dh in 0..7 {
        for dw in 0..9 {
            let off = ShiftOffset::new(dh, dw);
            let lhs = conv2d(
                &shift_circular(&x, off).unwrap(),
                &p.weights,
                &p.bias,
                1,
                PaddingMode::Circular,
            )
            .unwrap();
            assert!(lhs.max_abs_diff(&shift_circular(&y, off).unwrap()) <= 1e-12);
        }
    }
}

#[test]
fn subsampling_is_equivariant_only_on_its_lattice() {
    let mut rng = Pcg64::seed_from_u64(7);
    let x = random(&mut rng, &[1, 8, 8]);
    let y = subsample(&x, 2).unwrap();
    for d in 0..8i64 {
        let lhs = subsample(&shift_circular(&x, ShiftOffset::new(0, d)).unwrap(), 2).unwrap();
        let same = lhs == shift_circular(&y, ShiftOffset::new(0, d / 2)).unwrap();
        assert_eq!(same, d % 2 == 0, "shift {d}");
    }
}

#[test]
fn blur_upsample_interpolates() {
    let x = Tensor::from_slice(&[0.0, 1.0]);
    let lin = blur_upsample(&x, &kernel(KernelName::Tri3), 2, PaddingMode::Circular).unwrap();
    assert!(lin.max_abs_diff(&Tensor::from_slice(&[0.0, 0.5, 1.0, 0.5])) <= 1e-12);
    let mut rng = Pcg64::seed_from_u64(8);
    let x = random(&mut rng, &[2, 3, 4]);
    let near = blur_upsample(&x, &kernel(KernelName::Rect2), 2, PaddingMode::Circular).unwrap();
    assert!(near.max_abs_diff(&upsample_nearest(&x, 2).unwrap()) <= 1e-12);
}

#[test]
fn blurred_pooling_keeps_values_between_extremes() {
    let mut rng = Pcg64::seed_from_u64(9);
    for name in KernelName::ALL {
        let x = random(&mut rng, &[1, 1, 10, 10]);
        let y = blur_pool(&x, &kernel(name), 2, PaddingMode::Reflect).unwrap();
        assert!(y.max() <= x.max() + 1e-12 && y.min() >= x.min() - 1e-12);
    }
}
