use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nfcl_core::checkpoint::{Checkpoint, ModelKind};
use nfcl_core::forecaster::{Forecaster, ModelDims};
use nfcl_core::interpret::contribution;
use nfcl_core::nfcl::{MappingStack, NfclConfig, NfclModel, Variant};
use nfcl_core::optim::{adamw_step, AdamWState, TrainConfig};
use nfcl_core::synthetic::{linear_teacher, random_windows, teacher_dataset};
use nfcl_core::verify::{gradient_check, random_model, GRADIENT_EPS, GRADIENT_TOLERANCE};

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::V),
        Just(ModelKind::C),
        Just(ModelKind::D),
        Just(ModelKind::NLinear),
        Just(ModelKind::DLinear),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn analytic_gradients_match_finite_differences(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(kind, 0.01, &mut rng).unwrap();
        let d = model.dims();
        let x = random_windows(d, 3, &mut rng);
        let y = random_windows(ModelDims::new(d.series, d.horizon, 1).unwrap(), 3, &mut rng);
        let err = gradient_check(&model, &x, &y, GRADIENT_EPS).unwrap();
        prop_assert!(err <= GRADIENT_TOLERANCE, "{kind}: {err}");
    }

    #[test]
    fn perturbing_one_input_changes_one_mapped_value(
        points in 1usize..20,
        width in 1usize..6,
        target in 0usize..20,
        delta in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let target = target % points;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = MappingStack::filled(points, &[width, 2], 0.01, 0.0, 0.0).unwrap();
        for layer in h.layers_mut() {
            layer.weight.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -1.0..1.0));
            layer.bias.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        }
        let x = Array2::from_shape_fn((2, points), |(b, p)| (b * points + p) as f64 * 0.1 - 1.0);
        let mut moved = x.clone();
        moved[[1, target]] += delta;
        let a = h.forward(x.view()).unwrap();
        let b = h.forward(moved.view()).unwrap();
        for ((idx, u), v) in a.indexed_iter().zip(b.iter()) {
            if idx != (1, target) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn zeroing_a_weight_zeroes_one_map_entry(seed in any::<u64>(), k in 0usize..2, t in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims::new(2, 5, 3).unwrap();
        let mut model = NfclModel::init(NfclConfig::new(Variant::Complex, dims).with_hidden(&[3]), seed).unwrap();
        let x = random_windows(dims, 1, &mut rng);
        let sample = x.index_axis(Axis(0), 0);
        let before = contribution(&model, sample, k, t).unwrap();
        let (i, j) = (1, 2);
        model.branches_mut()[0].head.weight[[i * 5 + j, k * 3 + t]] = 0.0;
        let after = contribution(&model, sample, k, t).unwrap();
        for ((pos, u), v) in before.values.indexed_iter().zip(after.values.iter()) {
            if pos == (i, j) {
                prop_assert_eq!(*v, 0.0);
            } else {
                prop_assert_eq!(u, v);
            }
        }
    }

    #[test]
    fn vanilla_maps_are_linear_in_the_normalized_input(seed in any::<u64>(), alpha in 0.2f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims::new(2, 6, 2).unwrap();
        let mut model = NfclModel::init(NfclConfig::new(Variant::Vanilla, dims), seed).unwrap();
        let x = random_windows(dims, 1, &mut rng);
        let sample = x.index_axis(Axis(0), 0);
        // with beta = 0, doubling alpha doubles every normalized input
        model.branches_mut()[0].norm.alpha.fill(alpha);
        let once = contribution(&model, sample, 1, 1).unwrap();
        model.branches_mut()[0].norm.alpha.fill(2.0 * alpha);
        let twice = contribution(&model, sample, 1, 1).unwrap();
        prop_assert_eq!(once.bias, twice.bias);
        for (u, v) in once.values.iter().zip(twice.values.iter()) {
            prop_assert!((2.0 * u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(kind, 0.01, &mut rng).unwrap();
        let json = Checkpoint::from_model(&model).to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap().into_model().unwrap();
        let a: Vec<u64> = model.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.spec(), model.spec());
    }
}

#[test]
fn full_batch_adamw_decreases_the_loss() {
    let dims = ModelDims::new(4, 24, 6).unwrap();
    let teacher = linear_teacher(dims, 1).unwrap();
    let data = teacher_dataset(&teacher, 500, 0.01, 1).unwrap();
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut model = NfclModel::init(NfclConfig::new(Variant::Vanilla, dims), 2).unwrap();
    let mut state = AdamWState::new(&model);
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let (loss, grads) = model.loss_and_gradient(data.x.view(), data.y.view()).unwrap();
        assert!(loss < last, "{loss} after {last}");
        last = loss;
        adamw_step(&mut model, &grads, &mut state, &cfg).unwrap();
    }
}
