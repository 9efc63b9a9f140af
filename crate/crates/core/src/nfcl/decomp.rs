//! Multi-kernel moving-average decomposition along the lookback axis.

use ndarray::{s, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Left padding used before each moving average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Repeat the first value of the window.
    #[default]
    Replicate,
    Zero,
}

/// Strictly decreasing kernel sizes ending in 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompSpec {
    kernels: Vec<usize>,
}

impl Default for DecompSpec {
    fn default() -> Self {
        Self {
            kernels: vec![10, 4, 1],
        }
    }
}

impl DecompSpec {
    pub fn new(kernels: &[usize]) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidConfig("decomposition needs at least one kernel".into()));
        }
        if kernels.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "decomposition kernels must be strictly decreasing, got {kernels:?}"
            )));
        }
        if *kernels.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!(
                "the last decomposition kernel must be 1, got {kernels:?}"
            )));
        }
        Ok(Self {
            kernels: kernels.to_vec(),
        })
    }

    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Stride-1 average of width `kernel` over `x` left-padded by `kernel - 1` values.
fn left_padded_average(x: &[f64], kernel: usize, padding: Padding, out: &mut [f64]) {
    let fill = match padding {
        Padding::Replicate => x[0],
        Padding::Zero => 0.0,
    };
    let pad = kernel - 1;
    let at = |i: usize| if i < pad { fill } else { x[i - pad] };
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in t..t + kernel {
            acc += at(i);
        }
        *o = acc / kernel as f64;
    }
}

/// Components of one series, largest kernel first; they sum back to `x`.
pub fn decompose_series(x: &[f64], spec: &DecompSpec, padding: Padding) -> Vec<Vec<f64>> {
    let mut residual = x.to_vec();
    spec.kernels
        .iter()
        .map(|&kernel| {
            let mut component = vec![0.0; x.len()];
            left_padded_average(&residual, kernel, padding, &mut component);
            for (r, c) in residual.iter_mut().zip(&component) {
                *r -= c;
            }
            component
        })
        .collect()
}

/// Decompose every `(sample, variable)` row of a `B×K×L` batch.
pub fn decompose(x: ArrayView3<f64>, spec: &DecompSpec, padding: Padding) -> Vec<Array3<f64>> {
    let (b, k, _) = x.dim();
    let mut out = vec![Array3::zeros(x.dim()); spec.len()];
    for s_ in 0..b {
        for v in 0..k {
            let row = x.slice(s![s_, v, ..]).to_vec();
            for (n, comp) in decompose_series(&row, spec, padding).into_iter().enumerate() {
                out[n]
                    .slice_mut(s![s_, v, ..])
                    .assign(&ndarray::Array1::from(comp));
            }
        }
    }
    out
}
