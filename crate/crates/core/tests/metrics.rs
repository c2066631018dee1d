use bplab_core::metrics::{
    adversarial_shift_curve, classification_consistency, classification_variation,
    equivariance_heatmap, outputs_for_all_shifts, outputs_for_all_shifts_direct,
    predictions_for_all_shifts, supports_phase_sweep, ShiftMode,
};
use bplab_core::network::presets::{toy_vgg, ToyPooling};
use bplab_core::network::{LayerSpec, LossKind};
use bplab_core::{KernelName, Network, NetworkSpec, PaddingMode, Tensor};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = Pcg64::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

fn small_net(pool: LayerSpec, pad: PaddingMode) -> NetworkSpec {
    NetworkSpec {
        name: "small".into(),
        input: [1, 8, 8],
        classes: 3,
        loss: LossKind::SoftmaxXent,
        layers: vec![
            LayerSpec::Conv {
                out_channels: 4,
                k: 3,
                stride: 1,
                pad,
            },
            LayerSpec::Relu,
            pool.clone(),
            LayerSpec::Conv {
                out_channels: 4,
                k: 3,
                stride: 1,
                pad,
            },
            LayerSpec::Relu,
            pool,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Linear { out: 3 },
        ],
    }
}

#[test]
fn phase_sweep_is_bit_identical_to_direct_evaluation() {
    let pad = PaddingMode::Circular;
    let pools = [
        LayerSpec::MaxPool { k: 2, s: 2, pad },
        LayerSpec::MaxBlurPool {
            k: 2,
            filter: KernelName::Bin5,
            s: 2,
            pad,
            swapped: false,
        },
        LayerSpec::BlurPool {
            filter: KernelName::Tri3,
            s: 2,
            pad,
        },
        LayerSpec::AvgPool { k: 3, s: 2, pad },
    ];
    for (i, pool) in pools.into_iter().enumerate() {
        let net = Network::seeded(&small_net(pool, pad), i as u64).unwrap();
        assert!(supports_phase_sweep(&net));
        let x = random(40 + i as u64, &[1, 8, 8]);
        assert_eq!(
            outputs_for_all_shifts(&net, &x).unwrap(),
            outputs_for_all_shifts_direct(&net, &x).unwrap()
        );
    }
    let x = random(1, &[1, 32, 32]);
    for pooling in [
        ToyPooling::MaxPool,
        ToyPooling::MaxBlurPool(KernelName::Tri3),
    ] {
        let net = Network::seeded(&toy_vgg(pooling), 3).unwrap();
        assert_eq!(
            outputs_for_all_shifts(&net, &x).unwrap(),
            outputs_for_all_shifts_direct(&net, &x).unwrap()
        );
    }
}

#[test]
fn non_circular_nets_fall_back_to_direct_sweep() {
    let spec = small_net(
        LayerSpec::MaxPool {
            k: 2,
            s: 2,
            pad: PaddingMode::Zero,
        },
        PaddingMode::Zero,
    );
    let net = Network::seeded(&spec, 0).unwrap();
    assert!(!supports_phase_sweep(&net));
    let x = random(2, &[1, 8, 8]);
    assert_eq!(
        outputs_for_all_shifts(&net, &x).unwrap(),
        outputs_for_all_shifts_direct(&net, &x).unwrap()
    );
}

#[test]
fn toy_heatmaps_have_the_cumulative_stride_period() {
    let net = Network::seeded(&toy_vgg(ToyPooling::MaxPool), 7).unwrap();
    let x = random(8, &[1, 32, 32]);
    for (layer, period) in [(2, 1), (3, 2), (6, 4), (9, 8)] {
        let map = equivariance_heatmap(&net, &x, layer).unwrap();
        assert_eq!(map.stride, period);
        assert!(map.max_on_lattice(period) <= 1e-9, "layer {layer}");
        assert_eq!(map.period, period, "layer {layer}");
    }
    assert!(equivariance_heatmap(&net, &x, 10).is_err());
    assert!(equivariance_heatmap(&net, &x, 12).is_err());
}

#[test]
fn consistency_of_an_invariant_net_is_one() {
    // conv + global pooling only: circularly shift invariant
    let spec = NetworkSpec {
        name: "invariant".into(),
        input: [1, 8, 8],
        classes: 3,
        loss: LossKind::SoftmaxXent,
        layers: vec![
            LayerSpec::Conv {
                out_channels: 3,
                k: 3,
                stride: 1,
                pad: PaddingMode::Circular,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Linear { out: 3 },
        ],
    };
    let net = Network::seeded(&spec, 0).unwrap();
    let images = random(3, &[4, 1, 8, 8]);
    let c = classification_consistency(&net, &images, ShiftMode::Circular, 0, 0).unwrap();
    assert_eq!(c, 1.0);
    assert!(classification_variation(&net, &images.index_axis0(0).unwrap(), 1).unwrap() < 1e-12);
}

#[test]
fn consistency_matches_pair_count_oracle() {
    let net = Network::seeded(
        &small_net(
            LayerSpec::MaxPool {
                k: 2,
                s: 2,
                pad: PaddingMode::Circular,
            },
            PaddingMode::Circular,
        ),
        5,
    )
    .unwrap();
    let images = random(9, &[3, 1, 8, 8]);
    let got = classification_consistency(&net, &images, ShiftMode::Circular, 0, 0).unwrap();
    let mut expected = 0.0;
    for i in 0..3 {
        let preds = predictions_for_all_shifts(&net, &images.index_axis0(i).unwrap()).unwrap();
        let (mut agree, mut pairs) = (0u32, 0u32);
        for a in 0..preds.len() {
            for b in a + 1..preds.len() {
                pairs += 1;
                agree += u32::from(preds[a] == preds[b]);
            }
        }
        expected += f64::from(agree) / f64::from(pairs) / 3.0;
    }
    assert!((got - expected).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&got));
}

#[test]
fn crop_mode_evaluates_every_window() {
    let net = Network::seeded(
        &small_net(
            LayerSpec::MaxPool {
                k: 2,
                s: 2,
                pad: PaddingMode::Circular,
            },
            PaddingMode::Circular,
        ),
        5,
    )
    .unwrap();
    let images = random(10, &[2, 1, 12, 12]);
    let c = classification_consistency(&net, &images, ShiftMode::Crop, 0, 0).unwrap();
    assert!((0.0..=1.0).contains(&c));
    assert!(classification_consistency(&net, &images, ShiftMode::Circular, 0, 0).is_err());
}

#[test]
fn adversary_curve_is_monotone_and_counts_positions() {
    let net = Network::seeded(&toy_vgg(ToyPooling::MaxPool), 1).unwrap();
    let images = random(4, &[3, 1, 32, 32]);
    let labels = [0, 1, 2];
    let curve = adversarial_shift_curve(&net, &images, &labels, &[0, 1, 2, 4, 8, 16]).unwrap();
    for w in curve.windows(2) {
        assert!(w[1].accuracy <= w[0].accuracy);
    }
    assert_eq!(curve[0].positions_per_sample, 1);
    assert_eq!(curve[1].positions_per_sample, 9);
    assert_eq!(curve[5].positions_per_sample, 1024);
}
