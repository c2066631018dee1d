use bplab_core::filters::{apply_blur, make_kernel};
use bplab_core::metrics::image_tv;
use bplab_core::tensor::{crop_shift, shift_circular, upsample_nearest};
use bplab_core::{KernelName, PaddingMode, ShiftOffset, Tensor};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-4.0f64..4.0, h * w)
        .prop_map(move |d| Tensor::new(vec![1, h, w], d).unwrap())
}

fn kernel_name() -> impl Strategy<Value = KernelName> {
    prop::sample::select(KernelName::ALL.to_vec())
}

proptest! {
    #[test]
    fn shifts_compose_as_a_group(x in image(5, 7), a in -20i64..20, b in -20i64..20, c in -20i64..20, d in -20i64..20) {
        let ab = shift_circular(&shift_circular(&x, ShiftOffset::new(a, b)).unwrap(), ShiftOffset::new(c, d)).unwrap();
        prop_assert_eq!(&ab, &shift_circular(&x, ShiftOffset::new(a + c, b + d)).unwrap());
        let back = shift_circular(&shift_circular(&x, ShiftOffset::new(a, b)).unwrap(), ShiftOffset::new(-a, -b)).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn upsampling_commutes_with_coarse_shifts(x in image(3, 4), a in -6i64..6, b in -6i64..6, f in 1usize..4) {
        let lhs = upsample_nearest(&shift_circular(&x, ShiftOffset::new(a, b)).unwrap(), f).unwrap();
        let rhs = shift_circular(&upsample_nearest(&x, f).unwrap(), ShiftOffset::new(a * f as i64, b * f as i64)).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn blur_stays_within_input_range(x in image(6, 6), name in kernel_name(), pad in prop::sample::select(vec![PaddingMode::Circular, PaddingMode::Reflect])) {
        let y = apply_blur(&x, &make_kernel(name), pad).unwrap();
        prop_assert!(y.max() <= x.max() + 1e-12);
        prop_assert!(y.min() >= x.min() - 1e-12);
    }

    #[test]
    fn blurring_never_increases_image_tv(inner in prop::collection::vec(-4.0f64..4.0, 36), name in kernel_name()) {
        // zero margin of 3 keeps even bin7 from wrapping, so circular blur is a plain convex mix of shifts
        let mut d = vec![0.0; 144];
        for (i, v) in inner.into_iter().enumerate() {
            d[(i / 6 + 3) * 12 + i % 6 + 3] = v;
        }
        let x = Tensor::new(vec![1, 12, 12], d).unwrap();
        let y = apply_blur(&x, &make_kernel(name), PaddingMode::Circular).unwrap();
        prop_assert!(image_tv(&y).unwrap() <= image_tv(&x).unwrap() + 1e-9);
    }

    #[test]
    fn circular_blur_commutes_with_shift(x in image(6, 8), name in kernel_name(), a in -8i64..8, b in -8i64..8) {
        let k = make_kernel(name);
        let off = ShiftOffset::new(a, b);
        let lhs = apply_blur(&shift_circular(&x, off).unwrap(), &k, PaddingMode::Circular).unwrap();
        let rhs = shift_circular(&apply_blur(&x, &k, PaddingMode::Circular).unwrap(), off).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn crops_agree_on_their_overlap(x in image(9, 9), dh in 0i64..4, dw in 0i64..4) {
        let base = crop_shift(&x, 6, 6, ShiftOffset::ZERO).unwrap();
        let moved = crop_shift(&x, 6, 6, ShiftOffset::new(dh, dw)).unwrap();
        for r in dh as usize..6 {
            for c in dw as usize..6 {
                prop_assert_eq!(moved.get(&[0, r - dh as usize, c - dw as usize]), base.get(&[0, r, c]));
            }
        }
    }
}
