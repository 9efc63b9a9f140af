//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every oracle here is computed independently of the library routine under
//! test: parameter counts are literal integers, gradients come from central
//! differences evaluated in this file, and the point-network reference is a
//! scalar loop written directly over the layer tensors.

use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nfcl_core::checkpoint::{AnyModel, Checkpoint, ModelKind, ModelSpec};
use nfcl_core::datapipe::{load_csv, prepare, SplitSpec};
use nfcl_core::forecaster::{Forecaster, ModelDims, ParamRole};
use nfcl_core::interpret::{contribution, full_map};
use nfcl_core::metrics::{self, MetricsReport};
use nfcl_core::nfcl::{
    decompose, instance_denormalize, instance_normalize, parameter_count, DecompSpec, MappingStack,
    NfclConfig, NfclModel, NormParams, Padding, Variant,
};
use nfcl_core::optim::{train, TrainConfig};
use nfcl_core::synthetic::{linear_teacher, random_windows, teacher_dataset};

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: Some(ok),
        detail: detail.into(),
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: None,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

fn param_counts() -> Outcome {
    let start = Instant::now();
    let dims = |k| ModelDims::new(k, 24, 6).unwrap();
    let nfcl = |v, k| parameter_count(&NfclConfig::new(v, dims(k)).with_hidden(&[32])).unwrap();
    let nl = AnyModel::NLinear(nfcl_core::baselines::NLinearModel::init(dims(21), 0).unwrap());
    let dl = AnyModel::DLinear(nfcl_core::baselines::DLinearModel::init(dims(21), 25, 0).unwrap());
    let cases = [
        ("NFCL-V K=21", nfcl(Variant::Vanilla, 21), 63672),
        ("NFCL-C K=21", nfcl(Variant::Complex, 21), 112560),
        ("NFCL-V K=7", nfcl(Variant::Vanilla, 7), 7112),
        ("NFCL-C K=7", nfcl(Variant::Complex, 7), 23408),
        ("NLinear", nl.parameter_count(), 150),
        ("DLinear", dl.parameter_count(), 300),
    ];
    // the instantiated model must agree with the closed form
    let built = NfclModel::init(NfclConfig::new(Variant::Complex, dims(21)), 0).unwrap().parameter_count();
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(n, got, want)| format!("{n}: expected {want}, got {got}"))
        .collect();
    let elapsed = start.elapsed();
    pass_if(
        bad.is_empty() && built == 112560 && within(elapsed, Duration::from_secs(1)),
        if bad.is_empty() {
            format!("6 counts exact, instantiated C = {built}, {elapsed:.2?}")
        } else {
            bad.join("; ")
        },
    )
}

fn decomposed_count() -> Outcome {
    let mut bad = Vec::new();
    for k in [21, 10, 8, 7] {
        for t in [6, 12, 18, 24] {
            let dims = ModelDims::new(k, 24, t).unwrap();
            let c = parameter_count(&NfclConfig::new(Variant::Complex, dims)).unwrap();
            let cfg = NfclConfig::new(Variant::Decomposed, dims).with_kernels(&[10, 4, 1]);
            let d = parameter_count(&cfg).unwrap();
            let built = if k == 7 && t == 6 { NfclModel::init(cfg, 0).unwrap().parameter_count() } else { d };
            if d != 3 * c || built != d {
                bad.push(format!("K={k} T={t}: D={d}, 3C={}", 3 * c));
            }
        }
    }
    pass_if(bad.is_empty(), if bad.is_empty() { "16 shapes, D = 3 x C".into() } else { bad.join("; ") })
}

/// A random small configuration with every parameter moved off its initial value.
fn random_model(kind: ModelKind, rng: &mut ChaCha8Rng) -> AnyModel {
    let dims = ModelDims::new(rng.random_range(1..=3), rng.random_range(2..=6), rng.random_range(1..=3)).unwrap();
    let mut spec = ModelSpec::new(kind, dims);
    spec.hidden = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=4)).collect();
    let mut kernels: Vec<usize> = (2..=dims.lookback + 1).filter(|_| rng.random_bool(0.3)).take(2).collect();
    kernels.sort_unstable_by(|a, b| b.cmp(a));
    kernels.push(1);
    spec.kernels = kernels;
    spec.moving_avg = rng.random_range(1..=dims.lookback);
    let mut model = spec.init(rng.random()).unwrap();
    let metas = model.param_metas();
    let mut flat = model.flat_params();
    let mut at = 0;
    for meta in metas {
        let n: usize = meta.shape.iter().product();
        for v in &mut flat[at..at + n] {
            *v = match meta.role {
                ParamRole::NormScale => rng.random_range(0.5..1.5) * if rng.random_bool(0.2) { -1.0 } else { 1.0 },
                ParamRole::NormShift | ParamRole::Bias => rng.random_range(-0.5..0.5),
                ParamRole::Weight => *v + rng.random_range(-0.3..0.3),
            };
        }
        at += n;
    }
    model.set_flat_params(&flat).unwrap();
    model
}

fn central_difference(model: &AnyModel, x: &Array3<f64>, y: &Array3<f64>, eps: f64) -> Vec<f64> {
    let base = model.flat_params();
    let mut probe = model.clone();
    let mse = |m: &AnyModel| {
        let p = m.predict(x.view()).unwrap();
        p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
    };
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += eps;
            probe.set_flat_params(&p).unwrap();
            let up = mse(&probe);
            p[i] -= 2.0 * eps;
            probe.set_flat_params(&p).unwrap();
            let down = mse(&probe);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let kinds = [ModelKind::V, ModelKind::C, ModelKind::D, ModelKind::NLinear, ModelKind::DLinear];
    let mut worst = (0.0f64, String::new());
    for i in 0..100 {
        let kind = if i < kinds.len() { kinds[i] } else { *kinds.choose(&mut rng).unwrap() };
        let model = random_model(kind, &mut rng);
        let d = model.dims();
        let b = rng.random_range(1..=4);
        let x = random_windows(d, b, &mut rng);
        let y = Array3::from_shape_simple_fn((b, d.series, d.horizon), || rng.random_range(-2.0..2.0));
        let (_, g) = model.loss_and_gradient(x.view(), y.view()).unwrap();
        let numeric = central_difference(&model, &x, &y, 1e-5);
        for (a, n) in g.flat().iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-5);
            if rel > worst.0 {
                worst = (rel, format!("config {i} ({kind}, {d:?})"));
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(
        worst.0 <= 1e-4 && within(elapsed, Duration::from_secs(60)),
        format!("100 configs, max relative error {:.2e} at {}, {elapsed:.2?}", worst.0, worst.1),
    )
}

/// Scalar loop over the layer tensors, accumulating in input order.
#[allow(clippy::needless_range_loop)]
fn point_network(h: &MappingStack, p: usize, x: f64) -> f64 {
    let layers = h.layers();
    let mut a = vec![x];
    for (n, layer) in layers.iter().enumerate() {
        let (_, outs, ins) = layer.weight.dim();
        let mut next = vec![0.0; outs];
        for o in 0..outs {
            let mut acc = layer.bias[[p, o]];
            for i in 0..ins {
                acc += layer.weight[[p, o, i]] * a[i];
            }
            next[o] = if n + 1 < layers.len() && acc < 0.0 { h.slope() * acc } else { acc };
        }
        a = next;
    }
    a[0]
}

fn grouped_mapping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..50 {
        let points = rng.random_range(1..=40);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=8)).collect();
        let mut h = MappingStack::filled(points, &hidden, 0.01, 0.0, 0.0).unwrap();
        for layer in h.layers_mut() {
            layer.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = rng.random_range(1..=6);
        let x = Array2::from_shape_simple_fn((batch, points), || rng.random_range(-3.0..3.0));
        let grouped = h.forward(x.view()).unwrap();
        for ((b, p), v) in grouped.indexed_iter() {
            let want = point_network(&h, p, x[[b, p]]);
            if v.to_bits() != want.to_bits() {
                return pass_if(false, format!("case {case}: point {p} gives {v} vs {want}"));
            }
        }
    }
    pass_if(true, "50 shapes bit-identical")
}

fn decomposition_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for kernels in [[10, 4, 1], [5, 2, 1]] {
        let spec = DecompSpec::new(&kernels).unwrap();
        for _ in 0..50 {
            let d = ModelDims::new(rng.random_range(1..=4), rng.random_range(1..=48), 1).unwrap();
            let x = random_windows(d, rng.random_range(1..=3), &mut rng);
            let mut sum = Array3::<f64>::zeros(x.dim());
            for c in decompose(x.view(), &spec, Padding::Replicate) {
                sum += &c;
            }
            worst = worst.max(sum.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    pass_if(worst <= 1e-12, format!("100 inputs, max |sum - x| = {worst:.2e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn normalization_and_faithfulness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut round: f64 = 0.0;
    for _ in 0..50 {
        let d = ModelDims::new(rng.random_range(1..=4), rng.random_range(2..=24), 1).unwrap();
        let x = random_windows(d, rng.random_range(1..=4), &mut rng);
        let p = NormParams {
            alpha: ndarray::Array1::from_shape_simple_fn(d.series, || {
                rng.random_range(1e-3..3.0) * if rng.random_bool(0.3) { -1.0 } else { 1.0 }
            }),
            beta: ndarray::Array1::from_shape_simple_fn(d.series, || rng.random_range(-2.0..2.0)),
        };
        let (xt, stats) = instance_normalize(x.view(), &p).unwrap();
        let back = instance_denormalize(xt.view(), &p, &stats).unwrap();
        round = round.max(back.iter().zip(x.iter()).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max));
    }
    let mut faith: f64 = 0.0;
    for draw in 0..50 {
        let kind = [ModelKind::V, ModelKind::C, ModelKind::D][draw % 3];
        let AnyModel::Nfcl(model) = random_model(kind, &mut rng) else { unreachable!() };
        let d = model.dims();
        let x = random_windows(d, 1, &mut rng);
        let (yt, _) = model.forward_normalized(x.view()).unwrap();
        let (k, t) = (rng.random_range(0..d.series), rng.random_range(0..d.horizon));
        let sample = x.index_axis(Axis(0), 0);
        let map = contribution(&model, sample, k, t).unwrap();
        let total = map.values.sum() + map.bias;
        faith = faith.max(rel(total, yt[[0, k, t]]));
        let full = full_map(&model, sample).unwrap();
        for (q, v) in full.totals().iter().enumerate() {
            faith = faith.max(rel(*v, yt[[0, q / d.horizon, q % d.horizon]]));
        }
    }
    pass_if(
        round <= 1e-9 && faith <= 1e-9,
        format!("round trip {round:.2e}, faithfulness {faith:.2e} (50 draws each)"),
    )
}

fn metric_oracles() -> Outcome {
    let v = |xs: &[f64]| Array3::from_shape_vec((1, 1, xs.len()), xs.to_vec()).unwrap();
    let got = [
        metrics::mae(v(&[1.0, 2.0]).view(), v(&[2.0, 4.0]).view()).unwrap(),
        metrics::mse(v(&[1.0, 2.0]).view(), v(&[2.0, 4.0]).view()).unwrap(),
        metrics::smape(v(&[-1.0]).view(), v(&[1.0]).view()).unwrap(),
        metrics::r2(v(&[1.0, 2.0, 3.0]).view(), v(&[1.0, 2.0, 2.0]).view()).unwrap(),
    ];
    let want = [1.5, 2.5, 100.0, 0.5];
    pass_if(
        got == want,
        format!("MAE {} MSE {} SMAPE {} R2 {}", got[0], got[1], got[2], got[3]),
    )
}

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let dims = ModelDims::new(4, 24, 6).unwrap();
    let teacher = linear_teacher(dims, 7).unwrap();
    let data = teacher_dataset(&teacher, 2000, 0.01, 7).unwrap();
    let train_set = data.select(&(0..1200).collect::<Vec<_>>());
    let val_set = data.select(&(1200..1600).collect::<Vec<_>>());
    let test_set = data.select(&(1600..2000).collect::<Vec<_>>());
    let cfg = TrainConfig {
        lr: 1e-2,
        weight_decay: 0.0,
        patience: 50,
        max_epochs: 600,
        seed: 7,
        ..TrainConfig::default()
    };
    let student = NfclModel::init(NfclConfig::new(Variant::Vanilla, dims), 8).unwrap();
    let (best, report) = train(&student, &train_set, &val_set, &cfg).unwrap();
    let pred = best.forward(test_set.x.view()).unwrap();
    let m = MetricsReport::compute(test_set.y.view(), pred.view()).unwrap();
    let r2 = m.r2.unwrap_or(f64::NEG_INFINITY);
    let elapsed = start.elapsed();
    pass_if(
        r2 >= 0.99 && m.mse <= 3e-4 && within(elapsed, Duration::from_secs(120)),
        format!(
            "test R2 {r2:.5}, test MSE {:.3e} (noise floor 1e-4), best epoch {}, {elapsed:.2?}",
            m.mse, report.best_epoch
        ),
    )
}

fn determinism() -> Outcome {
    let run = || {
        let dims = ModelDims::new(3, 8, 2).unwrap();
        let teacher = linear_teacher(dims, 3).unwrap();
        let data = teacher_dataset(&teacher, 300, 0.05, 3).unwrap();
        let train_set = data.select(&(0..200).collect::<Vec<_>>());
        let val_set = data.select(&(200..250).collect::<Vec<_>>());
        let test_set = data.select(&(250..300).collect::<Vec<_>>());
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 32,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut spec = ModelSpec::new(ModelKind::D, dims);
        spec.hidden = vec![4];
        spec.kernels = vec![4, 2, 1];
        let (best, report) = train(&spec.init(11).unwrap(), &train_set, &val_set, &cfg).unwrap();
        let pred = best.predict(test_set.x.view()).unwrap();
        let m = MetricsReport::compute(test_set.y.view(), pred.view()).unwrap();
        let csv = format!("{}\n{}\n{}", MetricsReport::CSV_HEADER, m.csv_row(), report.to_csv());
        (Checkpoint::from_model(&best).to_json().unwrap(), csv)
    };
    let (a, b) = (run(), run());
    pass_if(
        a == b,
        format!("checkpoint {} bytes, metric CSV {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
    )
}

fn etth1_reference() -> Outcome {
    let Ok(path) = std::env::var("NFCL_ETTH1") else {
        return skip("set NFCL_ETTH1 to an ETTh1 CSV path to run");
    };
    let ds = load_csv(&path, None).unwrap();
    let data = prepare(&ds, &SplitSpec::default(), 24, 6).unwrap();
    let dims = ModelDims::new(ds.series(), 24, 6).unwrap();
    let (mut mae, mut mse) = (0.0, 0.0);
    for seed in 0..5 {
        let model = NfclModel::init(NfclConfig::new(Variant::Complex, dims).with_hidden(&[32]), seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (best, _) = train(&model, &data.train, &data.val, &cfg).unwrap();
        let pred = best.forward(data.test.x.view()).unwrap();
        let m = MetricsReport::compute(data.test.y.view(), pred.view()).unwrap();
        mae += m.mae / 5.0;
        mse += m.mse / 5.0;
    }
    pass_if(
        (mae - 0.368).abs() <= 0.02 && (mse - 0.319).abs() <= 0.03,
        format!("mean test MAE {mae:.4} (0.368 +/- 0.02), MSE {mse:.4} (0.319 +/- 0.03)"),
    )
}

fn main() {
    type Criterion = (&'static str, bool, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("parameter counts", true, param_counts),
        ("decomposed count = 3 x complex", true, decomposed_count),
        ("gradient correctness", true, gradients),
        ("grouped = looped point networks", true, grouped_mapping),
        ("decomposition identity", true, decomposition_identity),
        ("normalization round trip and faithfulness", true, normalization_and_faithfulness),
        ("metric oracles", true, metric_oracles),
        ("synthetic linear recovery", true, synthetic_recovery),
        ("determinism", true, determinism),
        ("ETTh1 reference numbers (soft)", false, etth1_reference),
    ];
    let mut hard_failures = 0;
    for (name, hard, check) in criteria {
        let outcome = check();
        let tag = match outcome.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        if hard && outcome.passed != Some(true) {
            hard_failures += 1;
        }
        println!("{tag} {name}: {}", outcome.detail);
    }
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
