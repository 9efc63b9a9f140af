//! The common surface shared by every trainable forecaster.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Problem dimensions: `series` variables, `lookback` input steps, `horizon` output steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub series: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl ModelDims {
    pub fn new(series: usize, lookback: usize, horizon: usize) -> Result<Self> {
        let dims = Self {
            series,
            lookback,
            horizon,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.series == 0 || self.lookback == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig(format!(
                "dimensions must be positive, got K={} L={} T={}",
                self.series, self.lookback, self.horizon
            )));
        }
        Ok(())
    }

    /// Number of flattened input points, `K·L`.
    pub fn inputs(&self) -> usize {
        self.series * self.lookback
    }

    /// Number of flattened output points, `K·T`.
    pub fn outputs(&self) -> usize {
        self.series * self.horizon
    }

    pub(crate) fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let (_, k, l) = x.dim();
        if k != self.series || l != self.lookback {
            return Err(shape_err(
                "model input",
                ("B", self.series, self.lookback),
                x.dim(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_target(&self, x: &ArrayView3<f64>, y: &ArrayView3<f64>) -> Result<()> {
        self.check_input(x)?;
        let expected = (x.dim().0, self.series, self.horizon);
        if y.dim() != expected {
            return Err(shape_err("model target", expected, y.dim()));
        }
        Ok(())
    }
}

/// What a parameter tensor does; decides whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamRole {
    pub fn decays(self) -> bool {
        matches!(self, ParamRole::Weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ParamMeta {
    pub fn new(name: impl Into<String>, shape: &[usize], role: ParamRole) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            role,
        }
    }
}

/// One named gradient tensor, flattened row-major like its parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub data: Vec<f64>,
}

/// Gradients of the loss for every parameter tensor, in visiting order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub entries: Vec<GradEntry>,
}

impl GradientSet {
    /// Collect the parameters of a model-shaped gradient accumulator.
    pub fn from_accumulator<F: Forecaster>(acc: &F) -> Self {
        let mut entries = Vec::new();
        acc.visit_params(&mut |meta, data| {
            entries.push(GradEntry {
                name: meta.name.clone(),
                data: data.to_vec(),
            })
        });
        Self { entries }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.data.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.data.as_slice())
    }

    /// Accumulate `other * weight` into `self`. Both must come from the same model.
    pub fn add_scaled(&mut self, other: &GradientSet, weight: f64) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += weight * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}

/// A trainable multi-horizon forecaster mapping `B×K×L` windows to `B×K×T` predictions.
pub trait Forecaster: Clone + Send + Sync {
    fn dims(&self) -> ModelDims;

    /// Raw-space predictions for a batch of raw-space windows.
    fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>>;

    /// Mean squared error over all `B·K·T` elements and its exact gradient.
    fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>)
        -> Result<(f64, GradientSet)>;

    fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64]));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64]));

    /// Hook run after every optimizer step (e.g. to keep parameters in a valid region).
    fn after_step(&mut self) {}

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, data| n += data.len());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.visit_params(&mut |_, data| out.extend_from_slice(data));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.parameter_count();
        if values.len() != expected {
            return Err(shape_err("flat parameters", expected, values.len()));
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |_, data| {
            data.copy_from_slice(&values[offset..offset + data.len()]);
            offset += data.len();
        });
        Ok(())
    }

    fn param_metas(&self) -> Vec<ParamMeta> {
        let mut out = Vec::new();
        self.visit_params(&mut |meta, _| out.push(meta.clone()));
        out
    }

    /// Mean squared error of the predictions against `y`.
    fn mse(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<f64> {
        self.dims().check_target(&x, &y)?;
        let pred = self.predict(x)?;
        crate::metrics::mse(pred.view(), y)
    }
}

/// Loss value and gradient of the mean squared error for given predictions.
pub(crate) fn mse_residual_grad(
    pred: &Array3<f64>,
    y: &ArrayView3<f64>,
) -> Result<(f64, Array3<f64>)> {
    let n = pred.len() as f64;
    let mut grad = pred - y;
    let loss = grad.iter().map(|r| r * r).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            epoch: None,
        });
    }
    grad.mapv_inplace(|r| 2.0 * r / n);
    Ok((loss, grad))
}
