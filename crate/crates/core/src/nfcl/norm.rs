//! Per-sample, per-variable instance normalization with learnable affine terms.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

use crate::error::{shape_err, Error, Result};

/// Floor applied to a window's standard deviation before dividing by it.
pub const NORM_STD_FLOOR: f64 = 1e-5;
/// Smallest magnitude `alpha` may take; keeps the output mapping invertible.
pub const ALPHA_FLOOR: f64 = 1e-8;

/// Learnable per-variable scale `alpha` (init 1) and shift `beta` (init 0).
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

impl NormParams {
    pub fn identity(series: usize) -> Self {
        Self {
            alpha: Array1::ones(series),
            beta: Array1::zeros(series),
        }
    }

    pub(crate) fn zeros(series: usize) -> Self {
        Self {
            alpha: Array1::zeros(series),
            beta: Array1::zeros(series),
        }
    }

    pub fn series(&self) -> usize {
        self.alpha.len()
    }

    /// Push every `alpha` at least `ALPHA_FLOOR` away from zero, keeping its sign.
    pub fn clamp_alpha(&mut self) {
        self.alpha.mapv_inplace(|a| {
            if a.abs() >= ALPHA_FLOOR {
                a
            } else if a < 0.0 {
                -ALPHA_FLOOR
            } else {
                ALPHA_FLOOR
            }
        });
    }
}

/// Lookback statistics of each sample and variable, kept to invert the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    /// `B×K` window means.
    pub mean: Array2<f64>,
    /// `B×K` population standard deviations, floored at `NORM_STD_FLOOR`.
    pub std: Array2<f64>,
}

/// Zero-mean unit-std windows `(x - mean) / std` along the lookback axis.
pub(crate) fn standardize(x: ArrayView3<f64>) -> (Array3<f64>, NormStats) {
    let (b, k, l) = x.dim();
    let n = l as f64;
    let mut z = x.to_owned();
    let mut mean = Array2::zeros((b, k));
    let mut std = Array2::zeros((b, k));
    for s in 0..b {
        for v in 0..k {
            let mut row = z.slice_mut(ndarray::s![s, v, ..]);
            let m = row.sum() / n;
            let var = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(NORM_STD_FLOOR);
            row.mapv_inplace(|x| (x - m) / sd);
            mean[[s, v]] = m;
            std[[s, v]] = sd;
        }
    }
    (z, NormStats { mean, std })
}

/// `alpha_k * (x - mean) / std + beta_k` for every sample and variable.
pub fn instance_normalize(x: ArrayView3<f64>, params: &NormParams) -> Result<(Array3<f64>, NormStats)> {
    if x.dim().1 != params.series() {
        return Err(shape_err("instance normalization", params.series(), x.dim().1));
    }
    let (mut z, stats) = standardize(x);
    for mut sample in z.axis_iter_mut(Axis(0)) {
        for (k, mut row) in sample.axis_iter_mut(Axis(0)).enumerate() {
            let (a, b) = (params.alpha[k], params.beta[k]);
            row.mapv_inplace(|v| a * v + b);
        }
    }
    Ok((z, stats))
}

/// `(y - beta_k) / alpha_k * std + mean`, reusing the statistics of the matching lookback.
pub fn instance_denormalize(
    y: ArrayView3<f64>,
    params: &NormParams,
    stats: &NormStats,
) -> Result<Array3<f64>> {
    let (b, k, _) = y.dim();
    if k != params.series() || stats.mean.dim() != (b, k) {
        return Err(shape_err(
            "instance denormalization",
            (stats.mean.nrows(), params.series()),
            (b, k),
        ));
    }
    if let Some(a) = params.alpha.iter().find(|a| a.abs() < ALPHA_FLOOR) {
        return Err(Error::InvalidConfig(format!(
            "normalization scale {a} is below the invertibility floor {ALPHA_FLOOR}"
        )));
    }
    let mut out = y.to_owned();
    for (s, mut sample) in out.axis_iter_mut(Axis(0)).enumerate() {
        for (v, mut row) in sample.axis_iter_mut(Axis(0)).enumerate() {
            let (a, be) = (params.alpha[v], params.beta[v]);
            let (m, sd) = (stats.mean[[s, v]], stats.std[[s, v]]);
            row.mapv_inplace(|t| (t - be) / a * sd + m);
        }
    }
    Ok(out)
}
