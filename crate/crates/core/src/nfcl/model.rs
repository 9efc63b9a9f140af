use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::decomp::{decompose, DecompSpec, Padding};
use super::linear::{flatten, unflatten, OutputLayer};
use super::mapping::{MappingCache, MappingStack, DEFAULT_LEAKY_SLOPE};
use super::norm::{standardize, NormParams, NormStats};
use crate::error::{shape_err, Error, Result};
use crate::forecaster::{
    mse_residual_grad, Forecaster, GradientSet, ModelDims, ParamMeta, ParamRole,
};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// One dense map from all input points to all output points.
    #[serde(rename = "v")]
    Vanilla,
    /// Per-point scalar networks ahead of the dense map.
    #[serde(rename = "c")]
    Complex,
    /// Moving-average components, each forecast by its own complex branch.
    #[serde(rename = "d")]
    Decomposed,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Vanilla => "v",
            Variant::Complex => "c",
            Variant::Decomposed => "d",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v" | "nfcl-v" => Ok(Variant::Vanilla),
            "c" | "nfcl-c" => Ok(Variant::Complex),
            "d" | "nfcl-d" => Ok(Variant::Decomposed),
            other => Err(Error::InvalidConfig(format!("unknown NFCL variant `{other}`"))),
        }
    }
}

/// Architecture of an NFCL model. `hidden` is ignored by the vanilla variant,
/// `kernels` and `padding` by everything but the decomposed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfclConfig {
    pub variant: Variant,
    pub dims: ModelDims,
    pub hidden: Vec<usize>,
    pub kernels: Vec<usize>,
    pub padding: Padding,
    pub leaky_slope: f64,
}

impl NfclConfig {
    pub fn new(variant: Variant, dims: ModelDims) -> Self {
        Self {
            variant,
            dims,
            hidden: vec![32],
            kernels: DecompSpec::default().kernels().to_vec(),
            padding: Padding::default(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden = hidden.to_vec();
        self
    }

    pub fn with_kernels(mut self, kernels: &[usize]) -> Self {
        self.kernels = kernels.to_vec();
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Self {
        self.leaky_slope = slope;
        self
    }

    fn branch_count(&self) -> Result<usize> {
        Ok(match self.variant {
            Variant::Decomposed => DecompSpec::new(&self.kernels)?.len(),
            _ => 1,
        })
    }

    fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidConfig("leaky slope must be finite".into()));
        }
        if self.variant != Variant::Vanilla && (self.hidden.is_empty() || self.hidden.contains(&0)) {
            return Err(Error::InvalidConfig(format!(
                "variant {} needs non-empty positive hidden widths, got {:?}",
                self.variant.tag(),
                self.hidden
            )));
        }
        self.branch_count().map(|_| ())
    }
}

/// Normalization, optional per-point mapping and output layer of one forecaster branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub norm: NormParams,
    pub mapping: Option<MappingStack>,
    pub head: OutputLayer,
}

struct BranchCache {
    /// Standardized input (before the affine map), `B×KL`.
    z: Array2<f64>,
    /// Affine-normalized input, `B×KL`.
    xt: Array2<f64>,
    mapping: Option<(MappingCache, Array2<f64>)>,
    /// Normalized-space output, `B×KT`.
    yt: Array2<f64>,
    /// Output with the branch affine undone, `B×KT`.
    u: Array2<f64>,
}

impl Branch {
    fn affine(&self, z: ArrayView2<f64>, dims: &ModelDims) -> Array2<f64> {
        let l = dims.lookback;
        let mut xt = z.to_owned();
        for mut row in xt.axis_iter_mut(Axis(0)) {
            for (p, v) in row.iter_mut().enumerate() {
                let k = p / l;
                *v = self.norm.alpha[k] * *v + self.norm.beta[k];
            }
        }
        xt
    }

    /// Per-point values fed to the output layer, `B×KL`.
    pub(crate) fn mapped(&self, z: ArrayView2<f64>, dims: &ModelDims) -> Array2<f64> {
        let xt = self.affine(z, dims);
        match &self.mapping {
            Some(m) => m.forward_cached(xt.view()).0,
            None => xt,
        }
    }

    fn forward(&self, z: Array2<f64>, dims: &ModelDims) -> BranchCache {
        let xt = self.affine(z.view(), dims);
        let mapping = self
            .mapping
            .as_ref()
            .map(|m| m.forward_cached(xt.view()))
            .map(|(xh, cache)| (cache, xh));
        let yt = {
            let feed = mapping.as_ref().map(|(_, xh)| xh).unwrap_or(&xt);
            self.head.forward(feed.view()).expect("shapes validated")
        };
        let t = dims.horizon;
        let mut u = yt.clone();
        for mut row in u.axis_iter_mut(Axis(0)) {
            for (q, v) in row.iter_mut().enumerate() {
                let k = q / t;
                *v = (*v - self.norm.beta[k]) / self.norm.alpha[k];
            }
        }
        BranchCache {
            z,
            xt,
            mapping,
            yt,
            u,
        }
    }

    /// `du` is the loss gradient w.r.t. this branch's de-affined output `u`.
    fn backward(&self, cache: &BranchCache, du: ArrayView2<f64>, dims: &ModelDims, grad: &mut Branch) {
        let (l, t) = (dims.lookback, dims.horizon);
        let mut dyt = du.to_owned();
        for ((b, q), d) in dyt.indexed_iter_mut() {
            let k = q / t;
            let a = self.norm.alpha[k];
            let g = *d;
            grad.norm.alpha[k] -= g * cache.u[[b, q]] / a;
            grad.norm.beta[k] -= g / a;
            *d = g / a;
        }
        let feed = cache.mapping.as_ref().map(|(_, xh)| xh).unwrap_or(&cache.xt);
        let dfeed = self.head.backward(feed.view(), dyt.view(), &mut grad.head);
        let dxt = match (&self.mapping, &cache.mapping) {
            (Some(m), Some((mc, _))) => {
                m.backward(mc, dfeed.view(), grad.mapping.as_mut().expect("same structure"))
            }
            _ => dfeed,
        };
        for ((b, p), d) in dxt.indexed_iter() {
            let k = p / l;
            grad.norm.alpha[k] += d * cache.z[[b, p]];
            grad.norm.beta[k] += d;
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        f(
            &ParamMeta::new(format!("{prefix}norm.alpha"), &[self.norm.alpha.len()], ParamRole::NormScale),
            self.norm.alpha.as_slice().expect("contiguous"),
        );
        f(
            &ParamMeta::new(format!("{prefix}norm.beta"), &[self.norm.beta.len()], ParamRole::NormShift),
            self.norm.beta.as_slice().expect("contiguous"),
        );
        if let Some(m) = &self.mapping {
            for (n, layer) in m.layers().iter().enumerate() {
                f(
                    &ParamMeta::new(format!("{prefix}mapping.{n}.weight"), layer.weight.shape(), ParamRole::Weight),
                    layer.weight.as_slice().expect("contiguous"),
                );
                f(
                    &ParamMeta::new(format!("{prefix}mapping.{n}.bias"), layer.bias.shape(), ParamRole::Bias),
                    layer.bias.as_slice().expect("contiguous"),
                );
            }
        }
        f(
            &ParamMeta::new(format!("{prefix}head.weight"), self.head.weight.shape(), ParamRole::Weight),
            self.head.weight.as_slice().expect("contiguous"),
        );
        f(
            &ParamMeta::new(format!("{prefix}head.bias"), self.head.bias.shape(), ParamRole::Bias),
            self.head.bias.as_slice().expect("contiguous"),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        let n_alpha = [self.norm.alpha.len()];
        f(
            &ParamMeta::new(format!("{prefix}norm.alpha"), &n_alpha, ParamRole::NormScale),
            self.norm.alpha.as_slice_mut().expect("contiguous"),
        );
        f(
            &ParamMeta::new(format!("{prefix}norm.beta"), &n_alpha, ParamRole::NormShift),
            self.norm.beta.as_slice_mut().expect("contiguous"),
        );
        if let Some(m) = &mut self.mapping {
            for (n, layer) in m.layers_mut().iter_mut().enumerate() {
                let ws = layer.weight.shape().to_vec();
                let bs = layer.bias.shape().to_vec();
                f(
                    &ParamMeta::new(format!("{prefix}mapping.{n}.weight"), &ws, ParamRole::Weight),
                    layer.weight.as_slice_mut().expect("contiguous"),
                );
                f(
                    &ParamMeta::new(format!("{prefix}mapping.{n}.bias"), &bs, ParamRole::Bias),
                    layer.bias.as_slice_mut().expect("contiguous"),
                );
            }
        }
        let ws = self.head.weight.shape().to_vec();
        let bs = self.head.bias.shape().to_vec();
        f(
            &ParamMeta::new(format!("{prefix}head.weight"), &ws, ParamRole::Weight),
            self.head.weight.as_slice_mut().expect("contiguous"),
        );
        f(
            &ParamMeta::new(format!("{prefix}head.bias"), &bs, ParamRole::Bias),
            self.head.bias.as_slice_mut().expect("contiguous"),
        );
    }
}

/// An NFCL forecaster of any variant.
///
/// The raw lookback of every sample is standardized per variable; the
/// vanilla and complex variants run a single branch on it, the decomposed
/// variant splits it into moving-average components and runs one
/// independent complex branch per component. Each branch applies its own
/// `alpha`/`beta`, forecasts in normalized space, and undoes its affine map;
/// branch outputs are summed and mapped back with the lookback statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NfclModel {
    config: NfclConfig,
    seed: u64,
    branches: Vec<Branch>,
}

impl NfclModel {
    /// Fresh model: weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases, `alpha = 1`, `beta = 0`.
    pub fn init(config: NfclConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let dims = config.dims;
        let branches = (0..config.branch_count()?)
            .map(|_| {
                let mapping = match config.variant {
                    Variant::Vanilla => None,
                    _ => Some(MappingStack::random(
                        dims.inputs(),
                        &config.hidden,
                        config.leaky_slope,
                        &mut rng,
                    )?),
                };
                Ok(Branch {
                    norm: NormParams::identity(dims.series),
                    mapping,
                    head: OutputLayer::random(&dims, &mut rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            seed,
            branches,
        })
    }

    /// Same structure with every parameter (including `alpha`) set to zero.
    pub fn zeros_like(&self) -> Self {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                norm: NormParams::zeros(self.config.dims.series),
                mapping: b.mapping.as_ref().map(|m| {
                    MappingStack::zeros(m.points(), m.hidden(), m.slope()).expect("validated")
                }),
                head: OutputLayer::zeros(&self.config.dims),
            })
            .collect();
        Self {
            config: self.config.clone(),
            seed: self.seed,
            branches,
        }
    }

    pub fn config(&self) -> &NfclConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    fn spec(&self) -> Option<DecompSpec> {
        match self.config.variant {
            Variant::Decomposed => Some(DecompSpec::new(&self.config.kernels).expect("validated")),
            _ => None,
        }
    }

    /// Standardized inputs of each branch, flattened to `B×KL`.
    fn branch_inputs(&self, z: &Array3<f64>) -> Vec<Array2<f64>> {
        match self.spec() {
            Some(spec) => decompose(z.view(), &spec, self.config.padding)
                .into_iter()
                .map(|c| flatten(c.view()))
                .collect(),
            None => vec![flatten(z.view())],
        }
    }

    /// Values each branch feeds to its output layer, `B×KL` per branch.
    pub fn mapped_inputs(&self, x: ArrayView3<f64>) -> Result<(Vec<Array2<f64>>, NormStats)> {
        self.config.dims.check_input(&x)?;
        let (z, stats) = standardize(x);
        let dims = self.config.dims;
        let mapped = self
            .branch_inputs(&z)
            .iter()
            .zip(&self.branches)
            .map(|(zi, br)| br.mapped(zi.view(), &dims))
            .collect();
        Ok((mapped, stats))
    }

    fn run(&self, x: ArrayView3<f64>) -> Result<(Vec<BranchCache>, NormStats)> {
        self.config.dims.check_input(&x)?;
        let (z, stats) = standardize(x);
        let dims = self.config.dims;
        let caches = self
            .branch_inputs(&z)
            .into_iter()
            .zip(&self.branches)
            .map(|(zi, br)| br.forward(zi, &dims))
            .collect();
        Ok((caches, stats))
    }

    fn assemble(&self, caches: &[BranchCache], stats: &NormStats) -> Array3<f64> {
        let (b, kt) = caches[0].u.dim();
        let mut u = Array2::<f64>::zeros((b, kt));
        for c in caches {
            u += &c.u;
        }
        let mut y = unflatten(u, self.config.dims.series);
        for ((s, k, _), v) in y.indexed_iter_mut() {
            *v = *v * stats.std[[s, k]] + stats.mean[[s, k]];
        }
        y
    }

    /// Normalized-space prediction `ỹ` (summed over branches) and the lookback statistics.
    pub fn forward_normalized(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, NormStats)> {
        let (caches, stats) = self.run(x)?;
        let (b, kt) = caches[0].yt.dim();
        let mut yt = Array2::<f64>::zeros((b, kt));
        for c in &caches {
            yt += &c.yt;
        }
        Ok((unflatten(yt, self.config.dims.series), stats))
    }

    /// Full pipeline: normalize, forecast, denormalize.
    pub fn forward(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        let (caches, stats) = self.run(x)?;
        Ok(self.assemble(&caches, &stats))
    }

    /// Gradient of the mean squared error over all `B·K·T` elements, and the loss.
    pub fn backward(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(GradientSet, f64)> {
        self.config.dims.check_target(&x, &y)?;
        let (caches, stats) = self.run(x)?;
        let pred = self.assemble(&caches, &stats);
        let (loss, dpred) = mse_residual_grad(&pred, &y)?;
        let mut du = dpred;
        for ((s, k, _), d) in du.indexed_iter_mut() {
            *d *= stats.std[[s, k]];
        }
        let du = flatten(du.view());
        let dims = self.config.dims;
        let mut acc = self.zeros_like();
        for ((br, cache), g) in self.branches.iter().zip(&caches).zip(acc.branches.iter_mut()) {
            br.backward(cache, du.view(), &dims, g);
        }
        Ok((GradientSet::from_accumulator(&acc), loss))
    }

    fn prefix(&self, n: usize) -> String {
        match self.config.variant {
            Variant::Decomposed => format!("branch{n}."),
            _ => String::new(),
        }
    }
}

impl Forecaster for NfclModel {
    fn dims(&self) -> ModelDims {
        self.config.dims
    }

    fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.forward(x)
    }

    fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
        self.backward(x, y).map(|(g, l)| (l, g))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        for (n, br) in self.branches.iter().enumerate() {
            br.visit(&self.prefix(n), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        for n in 0..self.branches.len() {
            let prefix = self.prefix(n);
            self.branches[n].visit_mut(&prefix, f);
        }
    }

    fn after_step(&mut self) {
        for br in &mut self.branches {
            br.norm.clamp_alpha();
        }
    }
}

/// Closed-form learnable-parameter count of an NFCL architecture.
pub fn parameter_count(config: &NfclConfig) -> Result<usize> {
    config.validate()?;
    let d = config.dims;
    let vanilla = d.inputs() * d.outputs() + d.outputs() + 2 * d.series;
    let per_point: usize = std::iter::once(1)
        .chain(config.hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum();
    let complex = vanilla + d.inputs() * per_point;
    Ok(match config.variant {
        Variant::Vanilla => vanilla,
        Variant::Complex => complex,
        Variant::Decomposed => config.branch_count()? * complex,
    })
}

/// Normalized-space forecast of the complex variant: mapping, then output layer.
pub fn forward_c(xt: ArrayView3<f64>, mapping: &MappingStack, head: &OutputLayer) -> Result<Array3<f64>> {
    let series = xt.dim().1;
    let xh = mapping.forward(flatten(xt).view())?;
    Ok(unflatten(head.forward(xh.view())?, series))
}

/// Normalized-space forecast of the decomposed variant on standardized windows:
/// each component passes through its branch's affine map and complex forecaster;
/// the branch outputs are summed.
pub fn forward_d(
    z: ArrayView3<f64>,
    spec: &DecompSpec,
    padding: Padding,
    branches: &[Branch],
) -> Result<Array3<f64>> {
    if branches.len() != spec.len() {
        return Err(shape_err("decomposed branches", spec.len(), branches.len()));
    }
    let comps = decompose(z, spec, padding);
    let mut total = Array3::zeros((z.dim().0, z.dim().1, branches[0].head.bias.len() / z.dim().1));
    for (comp, br) in comps.iter().zip(branches) {
        let mapping = br
            .mapping
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("decomposed branches need a mapping".into()))?;
        let xt = affine_only(comp.view(), &br.norm);
        total += &forward_c(xt.view(), mapping, &br.head)?;
    }
    Ok(total)
}

fn affine_only(z: ArrayView3<f64>, p: &NormParams) -> Array3<f64> {
    let mut out = z.to_owned();
    for ((_, k, _), v) in out.indexed_iter_mut() {
        *v = p.alpha[k] * *v + p.beta[k];
    }
    out
}
