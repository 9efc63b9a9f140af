//! The dense cross-series output layer.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::forecaster::ModelDims;

/// Weights from every input point `(i, j)` to every output point `(k, t)`.
///
/// Row `i·L + j` of `weight` belongs to input point `(i, j)`; column `k·T + t`
/// to output point `(k, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl OutputLayer {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            weight: Array2::zeros((dims.inputs(), dims.outputs())),
            bias: Array1::zeros(dims.outputs()),
        }
    }

    pub(crate) fn random(dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dims.inputs() as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((dims.inputs(), dims.outputs()), || {
            rng.random_range(-bound..=bound)
        });
        Self {
            weight,
            bias: Array1::zeros(dims.outputs()),
        }
    }

    /// `x w + b` for a `B×(K·L)` batch of flattened inputs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.nrows() {
            return Err(shape_err("output layer", self.weight.nrows(), x.ncols()));
        }
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut OutputLayer,
    ) -> Array2<f64> {
        grad.weight += &x.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

pub(crate) fn flatten(x: ArrayView3<f64>) -> Array2<f64> {
    let (b, k, l) = x.dim();
    x.to_owned()
        .into_shape_with_order((b, k * l))
        .expect("contiguous batch")
}

pub(crate) fn unflatten(y: Array2<f64>, series: usize) -> Array3<f64> {
    let (b, n) = y.dim();
    y.into_shape_with_order((b, series, n / series))
        .expect("contiguous batch")
}

/// Linear forecast on normalized windows: `ỹ[k,t] = Σ_ij x̃[i,j] w[i·L+j, k·T+t] + b[k·T+t]`.
pub fn forward_v(x: ArrayView3<f64>, layer: &OutputLayer) -> Result<Array3<f64>> {
    let series = x.dim().1;
    if !layer.weight.ncols().is_multiple_of(series) {
        return Err(shape_err("output layer columns", "multiple of K", layer.weight.ncols()));
    }
    Ok(unflatten(layer.forward(flatten(x).view())?, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_series_sum() {
        let layer = OutputLayer {
            weight: array![[1.0], [1.0]],
            bias: array![0.0],
        };
        let y = forward_v(array![[[2.0, 3.0]]].view(), &layer).unwrap();
        assert_eq!(y, array![[[5.0]]]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let dims = ModelDims::new(2, 3, 2).unwrap();
        let mut layer = OutputLayer::zeros(&dims);
        layer.bias = array![0.1, 0.2, 0.3, 0.4];
        let x = Array3::from_elem((3, 2, 3), 7.0);
        let y = forward_v(x.view(), &layer).unwrap();
        for s in 0..3 {
            assert_eq!(y.index_axis(Axis(0), s), array![[0.1, 0.2], [0.3, 0.4]]);
        }
    }

    #[test]
    fn series_major_flattening() {
        // K=2, L=1, T=1: column 0 -> (k=0), column 1 -> (k=1)
        let layer = OutputLayer {
            weight: array![[1.0, 2.0], [1.0, 0.0]],
            bias: array![0.5, 0.0],
        };
        let y = forward_v(array![[[1.0], [-1.0]]].view(), &layer).unwrap();
        assert_eq!(y, array![[[0.5], [2.0]]]);
    }

    #[test]
    fn shape_mismatch() {
        let layer = OutputLayer::zeros(&ModelDims::new(1, 3, 1).unwrap());
        assert!(forward_v(array![[[1.0, 2.0]]].view(), &layer).is_err());
    }
}
