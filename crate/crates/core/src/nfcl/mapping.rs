//! Independent scalar networks, one per input point.
//!
//! Every point `(i, j)` of the flattened `K·L` input owns a private
//! `1 → c_1 → … → c_N → 1` perceptron with leaky-ReLU after each hidden
//! layer and a linear last layer. The weights are stored as banks indexed by
//! point, which is exactly the layout of a pointwise group convolution with
//! group count `K·L`: [`MappingStack::forward`] evaluates the banks layer by
//! layer over the whole batch, [`MappingStack::map_points_reference`] walks the
//! points one at a time. Both accumulate in the same order and agree bit for bit.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub(crate) fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// Derivative of [`leaky`]; at exactly zero the negative-side slope is used.
#[inline]
pub(crate) fn leaky_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

/// One layer of every point's network: `weight[p, out, in]`, `bias[p, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseLayer {
    pub weight: Array3<f64>,
    pub bias: Array2<f64>,
}

impl PointwiseLayer {
    fn zeros(points: usize, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array3::zeros((points, fan_out, fan_in)),
            bias: Array2::zeros((points, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.dim().2
    }

    pub fn fan_out(&self) -> usize {
        self.weight.dim().1
    }
}

/// Saved activations of a grouped forward pass.
#[derive(Debug, Clone)]
pub(crate) struct MappingCache {
    /// Input of each layer, `B×P×fan_in`.
    inputs: Vec<Array3<f64>>,
    /// Pre-activation of each hidden layer, `B×P×fan_out`.
    pre: Vec<Array3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingStack {
    points: usize,
    hidden: Vec<usize>,
    slope: f64,
    layers: Vec<PointwiseLayer>,
}

impl MappingStack {
    fn check_hidden(hidden: &[usize]) -> Result<()> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "per-point mapping needs at least one hidden layer of positive width, got {hidden:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(points: usize, hidden: &[usize], slope: f64) -> Result<Self> {
        Self::check_hidden(hidden)?;
        let widths: Vec<usize> = std::iter::once(1)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| PointwiseLayer::zeros(points, w[0], w[1]))
            .collect();
        Ok(Self {
            points,
            hidden: hidden.to_vec(),
            slope,
            layers,
        })
    }

    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub(crate) fn random(
        points: usize,
        hidden: &[usize],
        slope: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut stack = Self::zeros(points, hidden, slope)?;
        for layer in &mut stack.layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        Ok(stack)
    }

    /// Every weight set to `weight` and every bias to `bias`.
    pub fn filled(points: usize, hidden: &[usize], slope: f64, weight: f64, bias: f64) -> Result<Self> {
        let mut stack = Self::zeros(points, hidden, slope)?;
        for layer in &mut stack.layers {
            layer.weight.fill(weight);
            layer.bias.fill(bias);
        }
        Ok(stack)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn layers(&self) -> &[PointwiseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [PointwiseLayer] {
        &mut self.layers
    }

    /// Parameters of one point's scalar network.
    pub fn params_per_point(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum()
    }

    /// `h^p(x)` for a single point, walking its layers directly.
    pub fn eval_point(&self, p: usize, x: f64) -> f64 {
        let last = self.layers.len() - 1;
        let mut act = vec![x];
        for (n, layer) in self.layers.iter().enumerate() {
            let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut acc = layer.bias[[p, o]];
                for (i, a) in act.iter().enumerate().take(fan_in) {
                    acc += layer.weight[[p, o, i]] * a;
                }
                next.push(if n < last { leaky(acc, self.slope) } else { acc });
            }
            act = next;
        }
        act[0]
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.points {
            return Err(shape_err("per-point mapping", self.points, x.ncols()));
        }
        Ok(())
    }

    /// Reference evaluation: loop over samples and points, one network at a time.
    pub fn map_points_reference(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut out = Array2::zeros(x.dim());
        for b in 0..x.nrows() {
            for p in 0..self.points {
                out[[b, p]] = self.eval_point(p, x[[b, p]]);
            }
        }
        Ok(out)
    }

    /// Grouped evaluation of every point network over a `B×P` batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        Ok(self.forward_cached(x).0)
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MappingCache) {
        let (batch, points) = x.dim();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = x
            .to_owned()
            .into_shape_with_order((batch, points, 1))
            .expect("contiguous");
        for (n, layer) in self.layers.iter().enumerate() {
            let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
            let w = layer.weight.as_slice().expect("standard layout");
            let bias = layer.bias.as_slice().expect("standard layout");
            let a = act.as_slice().expect("standard layout");
            let mut z = vec![0.0; batch * points * fan_out];
            for b in 0..batch {
                for p in 0..points {
                    let a_bp = &a[(b * points + p) * fan_in..][..fan_in];
                    let w_p = &w[p * fan_out * fan_in..][..fan_out * fan_in];
                    let z_bp = &mut z[(b * points + p) * fan_out..][..fan_out];
                    for o in 0..fan_out {
                        let mut acc = bias[p * fan_out + o];
                        for (wi, ai) in w_p[o * fan_in..][..fan_in].iter().zip(a_bp) {
                            acc += wi * ai;
                        }
                        z_bp[o] = acc;
                    }
                }
            }
            let z = Array3::from_shape_vec((batch, points, fan_out), z).expect("sized");
            let next = if n < last {
                let slope = self.slope;
                let activated = z.mapv(|v| leaky(v, slope));
                pre.push(z);
                activated
            } else {
                z
            };
            inputs.push(std::mem::replace(&mut act, next));
        }
        let out = act
            .into_shape_with_order((batch, points))
            .expect("single output per point");
        (out, MappingCache { inputs, pre })
    }

    /// Accumulates parameter gradients into `grad` and returns `d loss / d x`.
    pub(crate) fn backward(
        &self,
        cache: &MappingCache,
        dout: ArrayView2<f64>,
        grad: &mut MappingStack,
    ) -> Array2<f64> {
        let (batch, points) = dout.dim();
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = dout.iter().copied().collect();
        for n in (0..self.layers.len()).rev() {
            let layer = &self.layers[n];
            let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
            if n < last {
                let z = cache.pre[n].as_slice().expect("standard layout");
                for (d, &zv) in delta.iter_mut().zip(z) {
                    *d *= leaky_grad(zv, self.slope);
                }
            }
            let input = cache.inputs[n].as_slice().expect("standard layout");
            let w = layer.weight.as_slice().expect("standard layout");
            let g = &mut grad.layers[n];
            let gw = g.weight.as_slice_mut().expect("standard layout");
            let gb = g.bias.as_slice_mut().expect("standard layout");
            let mut dinput = vec![0.0; batch * points * fan_in];
            for b in 0..batch {
                for p in 0..points {
                    let base_in = (b * points + p) * fan_in;
                    let base_out = (b * points + p) * fan_out;
                    for o in 0..fan_out {
                        let d = delta[base_out + o];
                        gb[p * fan_out + o] += d;
                        let wrow = p * fan_out * fan_in + o * fan_in;
                        for i in 0..fan_in {
                            gw[wrow + i] += d * input[base_in + i];
                            dinput[base_in + i] += d * w[wrow + i];
                        }
                    }
                }
            }
            delta = dinput;
        }
        Array2::from_shape_vec((batch, points), delta).expect("single input per point")
    }
}
