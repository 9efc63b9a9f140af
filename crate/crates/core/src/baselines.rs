//! Channel-shared NLinear and DLinear baselines.
//!
//! Both apply one `L×T` linear map to every variable independently, so their
//! parameter counts do not depend on `K`.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::forecaster::{mse_residual_grad, Forecaster, GradientSet, ModelDims, ParamMeta, ParamRole};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_MOVING_AVG: usize = 25;

/// Shared `L×T` weight and `T` bias applied to every variable's row.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedLinear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SharedLinear {
    fn zeros(lookback: usize, horizon: usize) -> Self {
        Self {
            weight: Array2::zeros((lookback, horizon)),
            bias: Array1::zeros(horizon),
        }
    }

    fn random(lookback: usize, horizon: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (lookback as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((lookback, horizon), || rng.random_range(-bound..=bound)),
            bias: Array1::zeros(horizon),
        }
    }

    fn forward(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let mut y = rows.dot(&self.weight);
        y += &self.bias;
        y
    }

    fn backward(&self, rows: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut SharedLinear) {
        grad.weight += &rows.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    fn metas(&self, prefix: &str) -> [ParamMeta; 2] {
        [
            ParamMeta::new(format!("{prefix}weight"), self.weight.shape(), ParamRole::Weight),
            ParamMeta::new(format!("{prefix}bias"), self.bias.shape(), ParamRole::Bias),
        ]
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        let [w, b] = self.metas(prefix);
        f(&w, self.weight.as_slice().expect("contiguous"));
        f(&b, self.bias.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        let [w, b] = self.metas(prefix);
        f(&w, self.weight.as_slice_mut().expect("contiguous"));
        f(&b, self.bias.as_slice_mut().expect("contiguous"));
    }
}

/// `B×K×L` to `(B·K)×L` rows.
fn rows(x: ArrayView3<f64>) -> Array2<f64> {
    let (b, k, l) = x.dim();
    x.to_owned().into_shape_with_order((b * k, l)).expect("contiguous")
}

fn unrows(y: Array2<f64>, batch: usize, series: usize) -> Array3<f64> {
    let t = y.ncols();
    y.into_shape_with_order((batch, series, t)).expect("contiguous")
}

/// Subtract the last lookback value, apply the shared linear map, add it back.
#[derive(Debug, Clone, PartialEq)]
pub struct NLinearModel {
    dims: ModelDims,
    seed: u64,
    pub linear: SharedLinear,
}

impl NLinearModel {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        Ok(Self {
            dims,
            seed,
            linear: SharedLinear::random(dims.lookback, dims.horizon, &mut rng),
        })
    }

    pub fn zeros(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            seed,
            linear: SharedLinear::zeros(dims.lookback, dims.horizon),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn anchored(&self, x: ArrayView3<f64>) -> (Array2<f64>, Array1<f64>) {
        let mut r = rows(x);
        let last = r.column(self.dims.lookback - 1).to_owned();
        for (mut row, &a) in r.axis_iter_mut(Axis(0)).zip(&last) {
            row.mapv_inplace(|v| v - a);
        }
        (r, last)
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.dims.check_input(&x)?;
        let (r, last) = self.anchored(x);
        let mut y = self.linear.forward(r.view());
        for (mut row, &a) in y.axis_iter_mut(Axis(0)).zip(&last) {
            row.mapv_inplace(|v| v + a);
        }
        Ok(unrows(y, x.dim().0, self.dims.series))
    }
}

impl Forecaster for NLinearModel {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.forward(x)
    }

    fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
        self.dims.check_target(&x, &y)?;
        let pred = self.forward(x)?;
        let (loss, dpred) = mse_residual_grad(&pred, &y)?;
        let (r, _) = self.anchored(x);
        let mut acc = Self::zeros(self.dims, self.seed)?;
        self.linear.backward(r.view(), rows(dpred.view()).view(), &mut acc.linear);
        Ok((loss, GradientSet::from_accumulator(&acc)))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        self.linear.visit("", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        self.linear.visit_mut("", f);
    }
}

/// Centered moving average with the ends replicated so the output keeps length `L`.
pub fn moving_average(row: &[f64], kernel: usize) -> Vec<f64> {
    let n = row.len();
    let front = (kernel - 1) / 2;
    let at = |i: usize| -> f64 {
        if i < front {
            row[0]
        } else if i - front >= n {
            row[n - 1]
        } else {
            row[i - front]
        }
    };
    (0..n)
        .map(|t| (t..t + kernel).map(at).sum::<f64>() / kernel as f64)
        .collect()
}

/// Moving-average trend and remainder, each forecast by its own shared linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct DLinearModel {
    dims: ModelDims,
    seed: u64,
    kernel: usize,
    pub trend: SharedLinear,
    pub seasonal: SharedLinear,
}

impl DLinearModel {
    pub fn init(dims: ModelDims, kernel: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims, kernel, seed)?;
        let mut rng = stream_rng(seed, Stream::Init);
        m.trend = SharedLinear::random(dims.lookback, dims.horizon, &mut rng);
        m.seasonal = SharedLinear::random(dims.lookback, dims.horizon, &mut rng);
        Ok(m)
    }

    pub fn zeros(dims: ModelDims, kernel: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        if kernel == 0 {
            return Err(Error::InvalidConfig("moving-average kernel must be positive".into()));
        }
        Ok(Self {
            dims,
            seed,
            kernel,
            trend: SharedLinear::zeros(dims.lookback, dims.horizon),
            seasonal: SharedLinear::zeros(dims.lookback, dims.horizon),
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(trend, remainder)` rows, `(B·K)×L` each.
    pub fn split(&self, x: ArrayView3<f64>) -> (Array2<f64>, Array2<f64>) {
        let r = rows(x);
        let mut trend = Array2::zeros(r.dim());
        for (src, mut dst) in r.axis_iter(Axis(0)).zip(trend.axis_iter_mut(Axis(0))) {
            let avg = moving_average(src.as_slice().expect("contiguous"), self.kernel);
            dst.assign(&Array1::from(avg));
        }
        let rem = &r - &trend;
        (trend, rem)
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.dims.check_input(&x)?;
        let (trend, rem) = self.split(x);
        let y = self.trend.forward(trend.view()) + self.seasonal.forward(rem.view());
        Ok(unrows(y, x.dim().0, self.dims.series))
    }
}

impl Forecaster for DLinearModel {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.forward(x)
    }

    fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
        self.dims.check_target(&x, &y)?;
        let pred = self.forward(x)?;
        let (loss, dpred) = mse_residual_grad(&pred, &y)?;
        let dy = rows(dpred.view());
        let (trend, rem) = self.split(x);
        let mut acc = Self::zeros(self.dims, self.kernel, self.seed)?;
        self.trend.backward(trend.view(), dy.view(), &mut acc.trend);
        self.seasonal.backward(rem.view(), dy.view(), &mut acc.seasonal);
        Ok((loss, GradientSet::from_accumulator(&acc)))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        self.trend.visit("trend.", f);
        self.seasonal.visit("seasonal.", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        self.trend.visit_mut("trend.", f);
        self.seasonal.visit_mut("seasonal.", f);
    }
}
