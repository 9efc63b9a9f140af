//! Built-in verification battery.
//!
//! Each check compares the implementation against an independent route:
//! published parameter counts, central finite differences, the point-by-point
//! mapping loop, algebraic identities and hand-computed metric values.

use ndarray::{Array2, Array3, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::checkpoint::{AnyModel, ModelKind, ModelSpec};
use crate::forecaster::{Forecaster, ModelDims};
use crate::interpret::{contribution, full_map};
use crate::metrics;
use crate::nfcl::{
    decompose, forward_c, forward_v, instance_denormalize, instance_normalize, parameter_count,
    MappingStack, NfclConfig, NfclModel, NormParams, Variant, DEFAULT_LEAKY_SLOPE,
};
use crate::rng::{stream_rng, Stream};

/// Published learnable-parameter counts: `(K, T, NFCL-V, NFCL-C, DLinear, NLinear)` at `L = 24`, hidden `[32]`.
pub const PUBLISHED_COUNTS: [(usize, usize, usize, usize, usize, usize); 16] = [
    (21, 6, 63672, 112560, 300, 150),
    (21, 12, 127302, 176190, 600, 300),
    (21, 18, 190932, 239820, 900, 450),
    (21, 24, 254562, 303450, 1200, 600),
    (10, 6, 14480, 37760, 300, 150),
    (10, 12, 28940, 52220, 600, 300),
    (10, 18, 43400, 66680, 900, 450),
    (10, 24, 57860, 81140, 1200, 600),
    (8, 6, 9280, 27904, 300, 150),
    (8, 12, 18544, 37168, 600, 300),
    (8, 18, 27808, 46432, 900, 450),
    (8, 24, 37072, 55696, 1200, 600),
    (7, 6, 7112, 23408, 300, 150),
    (7, 12, 14210, 30506, 600, 300),
    (7, 18, 21308, 37604, 900, 450),
    (7, 24, 28406, 44702, 1200, 600),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Negative slope used by every per-point network built by the battery.
    pub leaky_slope: f64,
    pub gradient_configs: usize,
    pub random_cases: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            gradient_configs: 100,
            random_cases: 50,
            seed: 2024,
        }
    }
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that stays meaningful near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const GRADIENT_EPS: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Magnitude below which gradient errors are measured in absolute terms.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Largest relative error between analytic gradients and central differences of the loss.
pub fn gradient_check<F: Forecaster>(model: &F, x: &Array3<f64>, y: &Array3<f64>, eps: f64) -> crate::Result<f64> {
    let (_, grads) = model.loss_and_gradient(x.view(), y.view())?;
    let analytic = grads.flat();
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_flat_params(&p)?;
        let up = probe.mse(x.view(), y.view())?;
        p[i] = base[i] - eps;
        probe.set_flat_params(&p)?;
        let down = probe.mse(x.view(), y.view())?;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric, GRADIENT_FLOOR));
    }
    Ok(worst)
}

fn random_kernels(lookback: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (2..=lookback + 2).collect();
    let n = rng.random_range(0..=pool.len().min(2));
    let mut kernels: Vec<usize> = Vec::with_capacity(n + 1);
    for _ in 0..n {
        let i = rng.random_range(0..pool.len());
        kernels.push(pool.swap_remove(i));
    }
    kernels.sort_unstable_by(|a, b| b.cmp(a));
    kernels.push(1);
    kernels
}

/// A random small model of any kind with every parameter perturbed away from its init.
pub fn random_model(kind: ModelKind, slope: f64, rng: &mut impl Rng) -> crate::Result<AnyModel> {
    let dims = ModelDims::new(
        rng.random_range(1..=3),
        rng.random_range(2..=6),
        rng.random_range(1..=3),
    )?;
    let mut spec = ModelSpec::new(kind, dims);
    let layers = rng.random_range(1..=2);
    spec.hidden = (0..layers).map(|_| rng.random_range(1..=4)).collect();
    spec.kernels = random_kernels(dims.lookback, rng);
    spec.leaky_slope = slope;
    spec.moving_avg = rng.random_range(1..=dims.lookback + 1);
    let mut model = spec.init(rng.random())?;
    let metas = model.param_metas();
    let mut flat = model.flat_params();
    let mut offset = 0;
    for meta in metas {
        let n: usize = meta.shape.iter().product();
        for v in &mut flat[offset..offset + n] {
            *v = match meta.role {
                crate::forecaster::ParamRole::NormScale => {
                    let s = if rng.random_bool(0.2) { -1.0 } else { 1.0 };
                    s * rng.random_range(0.5..1.5)
                }
                crate::forecaster::ParamRole::NormShift | crate::forecaster::ParamRole::Bias => {
                    rng.random_range(-0.5..0.5)
                }
                crate::forecaster::ParamRole::Weight => *v + rng.random_range(-0.3..0.3),
            };
        }
        offset += n;
    }
    model.set_flat_params(&flat)?;
    Ok(model)
}

fn random_batch(dims: ModelDims, rng: &mut impl Rng) -> (Array3<f64>, Array3<f64>) {
    let b = rng.random_range(1..=4);
    let x = crate::synthetic::random_windows(dims, b, rng);
    let y = Array3::from_shape_simple_fn((b, dims.series, dims.horizon), || rng.random_range(-2.0..2.0));
    (x, y)
}

pub fn check_parameter_counts() -> CheckResult {
    let mut failures = Vec::new();
    for &(k, t, v, c, dl, nl) in &PUBLISHED_COUNTS {
        let dims = ModelDims::new(k, 24, t).expect("valid");
        let got = |variant| parameter_count(&NfclConfig::new(variant, dims)).expect("valid");
        let nlin = crate::baselines::NLinearModel::zeros(dims, 0).expect("valid").parameter_count();
        let dlin = crate::baselines::DLinearModel::zeros(dims, 25, 0).expect("valid").parameter_count();
        for (label, expected, actual) in [
            ("NFCL-V", v, got(Variant::Vanilla)),
            ("NFCL-C", c, got(Variant::Complex)),
            ("DLinear", dl, dlin),
            ("NLinear", nl, nlin),
        ] {
            if expected != actual {
                failures.push(format!("{label} K={k} T={t}: expected {expected}, actual {actual}"));
            }
        }
        let d = parameter_count(&NfclConfig::new(Variant::Decomposed, dims)).expect("valid");
        if d != 3 * c {
            failures.push(format!("NFCL-D K={k} T={t}: expected {}, actual {d}", 3 * c));
        }
    }
    // the closed form must agree with the instantiated models
    let dims = ModelDims::new(7, 24, 6).expect("valid");
    for variant in [Variant::Vanilla, Variant::Complex, Variant::Decomposed] {
        let cfg = NfclConfig::new(variant, dims);
        let built = NfclModel::init(cfg.clone(), 0).expect("valid").parameter_count();
        let formula = parameter_count(&cfg).expect("valid");
        if built != formula {
            failures.push(format!("{variant:?}: instantiated {built} != closed form {formula}"));
        }
    }
    CheckResult::new(
        "parameter counts",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} published rows reproduced", PUBLISHED_COUNTS.len())
        } else {
            failures.join("; ")
        },
    )
}

pub fn check_gradients(opts: &VerifyOptions) -> CheckResult {
    let mut rng = stream_rng(opts.seed, Stream::Verify);
    let kinds = [ModelKind::V, ModelKind::C, ModelKind::D, ModelKind::NLinear, ModelKind::DLinear];
    let mut worst = (0.0f64, String::new());
    for i in 0..opts.gradient_configs {
        let kind = if i < kinds.len() { kinds[i] } else { *kinds.choose(&mut rng).expect("non-empty") };
        let outcome = random_model(kind, opts.leaky_slope, &mut rng).and_then(|m| {
            let (x, y) = random_batch(m.dims(), &mut rng);
            gradient_check(&m, &x, &y, GRADIENT_EPS)
        });
        match outcome {
            Ok(err) if err > worst.0 => worst = (err, format!("config {i} ({kind})")),
            Ok(_) => {}
            Err(e) => return CheckResult::new("gradients", false, format!("config {i}: {e}")),
        }
    }
    CheckResult::new(
        "gradients",
        worst.0 <= GRADIENT_TOLERANCE,
        format!(
            "{} configs, max relative error {:.3e} (tolerance {GRADIENT_TOLERANCE:.0e}) at {}",
            opts.gradient_configs, worst.0, worst.1
        ),
    )
}

pub fn check_grouped_mapping(opts: &VerifyOptions) -> CheckResult {
    let mut rng = stream_rng(opts.seed.wrapping_add(1), Stream::Verify);
    for case in 0..opts.random_cases {
        let points = rng.random_range(1..=24);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=8)).collect();
        let batch = rng.random_range(1..=9);
        let Ok(h) = MappingStack::zeros(points, &hidden, opts.leaky_slope) else {
            return CheckResult::new("grouped mapping", false, "could not build mapping");
        };
        let mut h = h;
        for layer in h.layers_mut() {
            layer.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_simple_fn((batch, points), || rng.random_range(-3.0..3.0));
        let grouped = h.forward(x.view()).expect("sized");
        let looped = h.map_points_reference(x.view()).expect("sized");
        if grouped.iter().zip(looped.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return CheckResult::new("grouped mapping", false, format!("case {case} differs"));
        }
    }
    CheckResult::new("grouped mapping", true, format!("{} shapes bit-identical", opts.random_cases))
}

pub fn check_decomposition(opts: &VerifyOptions) -> CheckResult {
    let mut rng = stream_rng(opts.seed.wrapping_add(2), Stream::Verify);
    let mut worst: f64 = 0.0;
    for kernels in [[10, 4, 1], [5, 2, 1]] {
        let spec = crate::nfcl::DecompSpec::new(&kernels).expect("valid");
        for _ in 0..opts.random_cases {
            let dims = ModelDims::new(rng.random_range(1..=4), rng.random_range(1..=30), 1).expect("valid");
            let x = crate::synthetic::random_windows(dims, rng.random_range(1..=3), &mut rng);
            let parts = decompose(x.view(), &spec, crate::nfcl::Padding::Replicate);
            let mut sum = Array3::zeros(x.dim());
            for p in &parts {
                sum += p;
            }
            worst = worst.max((&sum - &x).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    CheckResult::new(
        "decomposition identity",
        worst <= 1e-12,
        format!("max |sum - x| = {worst:.3e}"),
    )
}

pub fn check_normalization(opts: &VerifyOptions) -> CheckResult {
    let mut rng = stream_rng(opts.seed.wrapping_add(3), Stream::Verify);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.random_cases {
        let dims = ModelDims::new(rng.random_range(1..=4), rng.random_range(2..=24), 1).expect("valid");
        let x = crate::synthetic::random_windows(dims, rng.random_range(1..=4), &mut rng);
        let p = NormParams {
            alpha: ndarray::Array1::from_shape_simple_fn(dims.series, || rng.random_range(0.2..2.0)),
            beta: ndarray::Array1::from_shape_simple_fn(dims.series, || rng.random_range(-1.0..1.0)),
        };
        let (xt, stats) = instance_normalize(x.view(), &p).expect("sized");
        let back = instance_denormalize(xt.view(), &p, &stats).expect("sized");
        for (a, b) in back.iter().zip(x.iter()) {
            worst = worst.max(relative_error(*a, *b, 1e-12));
        }
    }
    CheckResult::new("normalization round trip", worst <= 1e-9, format!("max relative error {worst:.3e}"))
}

pub fn check_metric_oracles() -> CheckResult {
    let v = |xs: &[f64]| Array3::from_shape_vec((1, 1, xs.len()), xs.to_vec()).expect("sized");
    let cases = [
        ("MAE", metrics::mae(v(&[1.0, 2.0]).view(), v(&[2.0, 4.0]).view()).ok(), 1.5),
        ("MSE", metrics::mse(v(&[1.0, 2.0]).view(), v(&[2.0, 4.0]).view()).ok(), 2.5),
        ("SMAPE", metrics::smape(v(&[-1.0]).view(), v(&[1.0]).view()).ok(), 100.0),
        ("SMAPE", metrics::smape(v(&[1.0]).view(), v(&[0.0]).view()).ok(), 100.0),
        ("R2", metrics::r2(v(&[1.0, 2.0, 3.0]).view(), v(&[1.0, 2.0, 2.0]).view()).ok(), 0.5),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| *got != Some(*want))
        .map(|(n, got, want)| format!("{n}: expected {want}, got {got:?}"))
        .collect();
    CheckResult::new("metric oracles", bad.is_empty(), if bad.is_empty() { "hand cases exact".into() } else { bad.join("; ") })
}

/// Unit-weight width-1 networks are the identity on positives and `0.01·x` on negatives.
pub fn check_identity_construction(opts: &VerifyOptions) -> CheckResult {
    let mut problems = Vec::new();
    let h = MappingStack::filled(1, &[1], opts.leaky_slope, 1.0, 0.0).expect("valid");
    if h.eval_point(0, 2.0) != 2.0 {
        problems.push(format!("h(2) = {}", h.eval_point(0, 2.0)));
    }
    let neg = h.eval_point(0, -1.0);
    if (neg + 0.01).abs() > 1e-15 {
        problems.push(format!("h(-1) = {neg}, expected -0.01"));
    }
    let mut rng = stream_rng(opts.seed.wrapping_add(4), Stream::Verify);
    let (k, l, t) = (2, 5, 3);
    let dims = ModelDims::new(k, l, t).expect("valid");
    let stack = MappingStack::filled(dims.inputs(), &[1], opts.leaky_slope, 1.0, 0.0).expect("valid");
    let cfg = NfclConfig::new(Variant::Vanilla, dims);
    let head = NfclModel::init(cfg, 3).expect("valid").branches()[0].head.clone();
    let xt = Array3::from_shape_simple_fn((3, k, l), || rng.random_range(0.01..2.0));
    let c = forward_c(xt.view(), &stack, &head).expect("sized");
    let v = forward_v(xt.view(), &head).expect("sized");
    if c != v {
        problems.push("complex forward differs from vanilla forward on positive inputs".into());
    }
    let xneg = xt.mapv(|v| -v);
    let c_neg = forward_c(xneg.view(), &stack, &head).expect("sized");
    let v_neg = forward_v(xneg.mapv(|v| 0.01 * v).view(), &head).expect("sized");
    if c_neg.iter().zip(v_neg.iter()).any(|(a, b)| relative_error(*a, *b, 1e-12) > 1e-12) {
        problems.push("negative inputs are not scaled by 0.01".into());
    }
    CheckResult::new(
        "identity construction",
        problems.is_empty(),
        if problems.is_empty() { "exact".into() } else { problems.join("; ") },
    )
}

pub fn check_faithfulness(opts: &VerifyOptions) -> CheckResult {
    let mut rng = stream_rng(opts.seed.wrapping_add(5), Stream::Verify);
    let mut worst: f64 = 0.0;
    for case in 0..opts.random_cases {
        let kind = [ModelKind::V, ModelKind::C, ModelKind::D][case % 3];
        let model = match random_model(kind, opts.leaky_slope, &mut rng) {
            Ok(AnyModel::Nfcl(m)) => m,
            Ok(_) => unreachable!("NFCL kinds build NFCL models"),
            Err(e) => return CheckResult::new("contribution faithfulness", false, e.to_string()),
        };
        let d = model.dims();
        let x = crate::synthetic::random_windows(d, 1, &mut rng);
        let (yt, _) = model.forward_normalized(x.view()).expect("sized");
        let (k, t) = (rng.random_range(0..d.series), rng.random_range(0..d.horizon));
        let sample = x.index_axis(Axis(0), 0);
        let map = contribution(&model, sample, k, t).expect("in range");
        worst = worst.max(relative_error(map.total(), yt[[0, k, t]], 1e-12));
        let full = full_map(&model, sample).expect("sized");
        for (q, total) in full.totals().iter().enumerate() {
            worst = worst.max(relative_error(*total, yt[[0, q / d.horizon, q % d.horizon]], 1e-12));
        }
    }
    CheckResult::new("contribution faithfulness", worst <= 1e-9, format!("max relative error {worst:.3e}"))
}

pub fn run_battery(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        check_parameter_counts(),
        check_gradients(opts),
        check_grouped_mapping(opts),
        check_decomposition(opts),
        check_normalization(opts),
        check_metric_oracles(),
        check_identity_construction(opts),
        check_faithfulness(opts),
    ]
}

pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    results
        .iter()
        .map(|r| {
            format!(
                "{:<4}  {:<width$}  {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.detail
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            gradient_configs: 15,
            random_cases: 10,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn battery_passes() {
        let results = run_battery(&quick());
        assert!(results.iter().all(|r| r.passed), "{}", render_table(&results));
    }

    #[test]
    fn corrupted_slope_is_caught_by_identity_check_only() {
        let opts = VerifyOptions {
            leaky_slope: 0.5,
            ..quick()
        };
        assert!(check_gradients(&opts).passed);
        assert!(!check_identity_construction(&opts).passed);
    }
}
