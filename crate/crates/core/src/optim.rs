//! AdamW and the early-stopping mini-batch training loop.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::WindowBatch;
use crate::error::{shape_err, Error, Result};
use crate::forecaster::{Forecaster, GradientSet};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Compute each mini-batch gradient in one serial pass.
    pub deterministic: bool,
    /// Worker threads for batch gradients when `deterministic` is off.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            patience: 100,
            max_epochs: 1000,
            seed: 0,
            shuffle: true,
            deterministic: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch_size, patience and max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamWState {
    pub fn new<F: Forecaster>(model: &F) -> Self {
        let mut m = Vec::new();
        model.visit_params(&mut |_, data| m.push(vec![0.0; data.len()]));
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Decoupled-decay Adam update of one tensor at (1-based) step `step`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    decay: bool,
    cfg: &TrainConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let lambda = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = theta[i];
        theta[i] = old - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * lambda * old;
    }
}

/// One optimizer step over every parameter of `model`. Weight decay applies to weights only.
pub fn adamw_step<F: Forecaster>(
    model: &mut F,
    grads: &GradientSet,
    state: &mut AdamWState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            epoch: None,
        });
    }
    if state.m.len() != grads.entries.len() {
        return Err(shape_err("optimizer state", state.m.len(), grads.entries.len()));
    }
    state.step += 1;
    let step = state.step;
    let mut idx = 0;
    let mut mismatch = None;
    model.visit_params_mut(&mut |meta, theta| {
        let g = &grads.entries[idx].data;
        if g.len() != theta.len() || state.m[idx].len() != theta.len() {
            mismatch.get_or_insert((meta.name.clone(), theta.len(), g.len()));
        } else {
            adamw_update(
                theta,
                g,
                &mut state.m[idx],
                &mut state.v[idx],
                step,
                meta.role.decays(),
                cfg,
            );
        }
        idx += 1;
    });
    if let Some((name, expected, got)) = mismatch {
        return Err(shape_err("gradient tensor", (name, expected), got));
    }
    model.after_step();
    Ok(())
}

/// Strict-improvement patience counter over validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record `val` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_time: Duration,
}

impl TrainReport {
    /// `epoch,train_mse,val_mse` rows; wall time is left out so reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
        }
        out
    }
}

fn batch_gradient<F: Forecaster>(
    model: &F,
    batch: &WindowBatch,
    cfg: &TrainConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, GradientSet)> {
    let pool = match pool {
        Some(p) if !cfg.deterministic && batch.len() > 1 => p,
        _ => return model.loss_and_gradient(batch.x.view(), batch.y.view()),
    };
    let n = batch.len();
    let chunk = n.div_ceil(pool.current_num_threads());
    let positions: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(chunk)
        .map(<[usize]>::to_vec)
        .collect();
    let parts: Vec<Result<(usize, f64, GradientSet)>> = pool.install(|| {
        positions
            .par_iter()
            .map(|pos| {
                let sub = batch.select(pos);
                model
                    .loss_and_gradient(sub.x.view(), sub.y.view())
                    .map(|(l, g)| (pos.len(), l, g))
            })
            .collect()
    });
    // Reduce in chunk order so the result does not depend on scheduling.
    let mut loss = 0.0;
    let mut total: Option<GradientSet> = None;
    for part in parts {
        let (len, l, g) = part?;
        let w = len as f64 / n as f64;
        loss += w * l;
        match &mut total {
            Some(t) => t.add_scaled(&g, w),
            None => {
                let mut t = g.clone();
                t.entries.iter_mut().for_each(|e| e.data.iter_mut().for_each(|v| *v *= w));
                total = Some(t);
            }
        }
    }
    Ok((loss, total.expect("non-empty batch")))
}

/// Mini-batch AdamW with early stopping on full-validation MSE.
///
/// Returns a copy of the parameters from the best validation epoch.
pub fn train<F: Forecaster>(
    model: &F,
    train_set: &WindowBatch,
    val_set: &WindowBatch,
    cfg: &TrainConfig,
) -> Result<(F, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyData("training needs non-empty train and validation windows".into()));
    }
    let started = Instant::now();
    let pool = if !cfg.deterministic && cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut current = model.clone();
    let mut best = model.clone();
    let mut state = AdamWState::new(&current);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut train_loss = 0.0;
        let mut diverged = false;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk);
            let step = batch_gradient(&current, &batch, cfg, pool.as_ref())
                .and_then(|(loss, grads)| {
                    adamw_step(&mut current, &grads, &mut state, cfg).map(|_| loss)
                });
            match step {
                Ok(loss) => train_loss += loss * chunk.len() as f64,
                Err(Error::NonFinite { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val_mse = if diverged {
            f64::NAN
        } else {
            current.mse(val_set.x.view(), val_set.y.view())?
        };
        if diverged || !val_mse.is_finite() {
            let (best_epoch, best_val_mse) = stopper.best();
            let report = TrainReport {
                epochs,
                best_epoch,
                best_val_mse,
                stopped_epoch: epoch,
                stop_reason: StopReason::Diverged,
                wall_time: started.elapsed(),
            };
            return Err(Error::Diverged {
                epoch,
                report: Box::new(report),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_mse: train_loss / train_set.len() as f64,
            val_mse,
        });
        if stopper.observe(epoch, val_mse) {
            best = current.clone();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let (best_epoch, best_val_mse) = stopper.best();
    let report = TrainReport {
        stopped_epoch: epochs.last().map(|r| r.epoch).unwrap_or(0),
        epochs,
        best_epoch,
        best_val_mse,
        stop_reason,
        wall_time: started.elapsed(),
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{ModelDims, ParamMeta, ParamRole};
    use ndarray::{Array3, ArrayView3};

    /// Predicts one learnable constant everywhere.
    #[derive(Debug, Clone)]
    struct Constant {
        theta: [f64; 1],
    }

    impl Forecaster for Constant {
        fn dims(&self) -> ModelDims {
            ModelDims::new(1, 1, 1).unwrap()
        }

        fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
            Ok(Array3::from_elem((x.dim().0, 1, 1), self.theta[0]))
        }

        fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
            let pred = self.predict(x)?;
            let (loss, d) = crate::forecaster::mse_residual_grad(&pred, &y)?;
            let acc = Constant { theta: [d.sum()] };
            Ok((loss, GradientSet::from_accumulator(&acc)))
        }

        fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
            f(&ParamMeta::new("theta", &[1], ParamRole::Weight), &self.theta);
        }

        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
            f(&ParamMeta::new("theta", &[1], ParamRole::Weight), &mut self.theta);
        }
    }

    fn constant_batch(n: usize, target: f64) -> WindowBatch {
        WindowBatch {
            x: Array3::zeros((n, 1, 1)),
            y: Array3::from_elem((n, 1, 1), target),
            indices: (0..n).collect(),
        }
    }

    /// Records the sample ids (stored in `x`) of every batch it is trained on.
    #[derive(Debug, Clone)]
    struct Recorder {
        inner: Constant,
        log: std::sync::Arc<std::sync::Mutex<Vec<Vec<usize>>>>,
    }

    impl Forecaster for Recorder {
        fn dims(&self) -> ModelDims {
            self.inner.dims()
        }

        fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
            self.inner.predict(x)
        }

        fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
            self.log.lock().unwrap().push(x.iter().map(|v| *v as usize).collect());
            self.inner.loss_and_gradient(x, y)
        }

        fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
            self.inner.visit_params(f)
        }

        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
            self.inner.visit_params_mut(f)
        }
    }

    #[test]
    fn every_epoch_visits_each_sample_once() {
        let mut data = constant_batch(10, 1.0);
        data.x = Array3::from_shape_fn((10, 1, 1), |(i, _, _)| i as f64);
        let model = Recorder {
            inner: Constant { theta: [0.0] },
            log: Default::default(),
        };
        let cfg = TrainConfig {
            batch_size: 3,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        train(&model, &data, &data, &cfg).unwrap();
        let log = model.log.lock().unwrap();
        assert_eq!(log.len(), 4 * 4);
        let mut orders = Vec::new();
        for epoch in log.chunks(4) {
            assert_eq!(epoch.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
            let mut seen: Vec<usize> = epoch.concat();
            orders.push(seen.clone());
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        assert_ne!(orders[0], orders[1]);
    }

    #[test]
    fn single_step_from_one() {
        let cfg = TrainConfig::default();
        let (mut th, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adamw_update(&mut th, &[1.0], &mut m, &mut v, 1, true, &cfg);
        assert!((th[0] - 0.99899).abs() < 5e-7, "{}", th[0]);
        assert!((th[0] - (1.0 - 0.001 / (1.0 + 1e-8) - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_fixed_point_and_pure_decay() {
        let mut cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (mut th, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adamw_update(&mut th, &[0.0], &mut m, &mut v, 1, true, &cfg);
        assert_eq!((th[0], m[0], v[0]), (1.0, 0.0, 0.0));
        cfg.weight_decay = 0.01;
        adamw_update(&mut th, &[0.0], &mut m, &mut v, 1, true, &cfg);
        assert!((th[0] - 0.99999).abs() < 1e-15);
        // biases and norm terms never decay
        let mut b = [1.0];
        adamw_update(&mut b, &[0.0], &mut [0.0], &mut [0.0], 1, false, &cfg);
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut model = Constant { theta: [0.0] };
        let mut state = AdamWState::new(&model);
        let grads = GradientSet {
            entries: vec![crate::forecaster::GradEntry {
                name: "theta".into(),
                data: vec![f64::NAN],
            }],
        };
        assert!(adamw_step(&mut model, &grads, &mut state, &TrainConfig::default()).is_err());
    }

    #[test]
    fn early_stopping_counter() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(1, 1.0));
        assert!(!s.observe(2, 1.0)); // equal is not an improvement
        assert!(!s.should_stop());
        assert!(!s.observe(3, 2.0));
        assert!(s.should_stop());
        assert_eq!(s.best(), (1, 1.0));
    }

    #[test]
    fn stops_after_patience_and_restores_best() {
        // Training pulls theta toward +1 while validation wants -1, so validation
        // loss rises every epoch.
        let cfg = TrainConfig {
            patience: 1,
            lr: 0.05,
            weight_decay: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let model = Constant { theta: [0.0] };
        let (best, report) = train(&model, &constant_batch(8, 1.0), &constant_batch(4, -1.0), &cfg).unwrap();
        assert_eq!(report.stopped_epoch, 2);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.stop_reason, StopReason::Patience);
        assert!(report.epochs[1].val_mse > report.epochs[0].val_mse);
        assert!((report.best_val_mse - (best.theta[0] + 1.0).powi(2)).abs() < 1e-12);
        assert!(best.theta[0] > 0.0);
    }

    #[test]
    fn max_epochs_cap_and_best_is_min() {
        let cfg = TrainConfig {
            max_epochs: 7,
            lr: 0.01,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let model = Constant { theta: [0.0] };
        let (_, report) = train(&model, &constant_batch(10, 1.0), &constant_batch(2, 1.0), &cfg).unwrap();
        assert_eq!(report.epochs.len(), 7);
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        let min = report.epochs.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_mse, min);
        assert!(report.to_csv().starts_with("epoch,train_mse,val_mse\n1,"));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            lr: 1e300,
            weight_decay: 0.0,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let model = Constant { theta: [0.0] };
        match train(&model, &constant_batch(4, 1e300), &constant_batch(2, 1e300), &cfg) {
            Err(Error::Diverged { report, .. }) => assert_eq!(report.stop_reason, StopReason::Diverged),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
