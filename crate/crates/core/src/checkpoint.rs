//! A tagged union over every trainable model, and its JSON checkpoint format.
//!
//! A checkpoint is one JSON object holding the architecture (variant tag,
//! dims, widths, kernels, seed) and every parameter tensor as a name, a shape
//! and a row-major array of decimal `f64`s. Floats are written in shortest
//! round-trip form and parsed with correct rounding, so `load(save(m)) == m`
//! bit for bit.

use std::path::Path;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::baselines::{DLinearModel, NLinearModel, DEFAULT_MOVING_AVG};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, GradientSet, ModelDims, ParamMeta};
use crate::nfcl::{NfclConfig, NfclModel, Padding, Variant, DEFAULT_LEAKY_SLOPE};

pub const CHECKPOINT_FORMAT: &str = "nfcl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    V,
    C,
    D,
    NLinear,
    DLinear,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::V => "v",
            ModelKind::C => "c",
            ModelKind::D => "d",
            ModelKind::NLinear => "nlinear",
            ModelKind::DLinear => "dlinear",
        }
    }

    pub fn nfcl_variant(self) -> Option<Variant> {
        match self {
            ModelKind::V => Some(Variant::Vanilla),
            ModelKind::C => Some(Variant::Complex),
            ModelKind::D => Some(Variant::Decomposed),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v" | "nfcl-v" => Ok(ModelKind::V),
            "c" | "nfcl-c" => Ok(ModelKind::C),
            "d" | "nfcl-d" => Ok(ModelKind::D),
            "nlinear" => Ok(ModelKind::NLinear),
            "dlinear" => Ok(ModelKind::DLinear),
            other => Err(Error::InvalidConfig(format!(
                "unknown model `{other}` (expected v, c, d, nlinear or dlinear)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Everything needed to build a model skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub hidden: Vec<usize>,
    pub kernels: Vec<usize>,
    pub padding: Padding,
    pub leaky_slope: f64,
    pub moving_avg: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dims: ModelDims) -> Self {
        let d = NfclConfig::new(Variant::Vanilla, dims);
        Self {
            kind,
            dims,
            hidden: d.hidden,
            kernels: d.kernels,
            padding: d.padding,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            moving_avg: DEFAULT_MOVING_AVG,
        }
    }

    fn nfcl_config(&self, variant: Variant) -> NfclConfig {
        NfclConfig {
            variant,
            dims: self.dims,
            hidden: self.hidden.clone(),
            kernels: self.kernels.clone(),
            padding: self.padding,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn init(&self, seed: u64) -> Result<AnyModel> {
        Ok(match self.kind.nfcl_variant() {
            Some(v) => AnyModel::Nfcl(NfclModel::init(self.nfcl_config(v), seed)?),
            None if self.kind == ModelKind::NLinear => AnyModel::NLinear(NLinearModel::init(self.dims, seed)?),
            None => AnyModel::DLinear(DLinearModel::init(self.dims, self.moving_avg, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Nfcl(NfclModel),
    NLinear(NLinearModel),
    DLinear(DLinearModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Nfcl(m) => match m.variant() {
                Variant::Vanilla => ModelKind::V,
                Variant::Complex => ModelKind::C,
                Variant::Decomposed => ModelKind::D,
            },
            AnyModel::NLinear(_) => ModelKind::NLinear,
            AnyModel::DLinear(_) => ModelKind::DLinear,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AnyModel::Nfcl(m) => m.seed(),
            AnyModel::NLinear(m) => m.seed(),
            AnyModel::DLinear(m) => m.seed(),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.kind(), self.dims());
        match self {
            AnyModel::Nfcl(m) => {
                let c = m.config();
                spec.hidden = c.hidden.clone();
                spec.kernels = c.kernels.clone();
                spec.padding = c.padding;
                spec.leaky_slope = c.leaky_slope;
            }
            AnyModel::DLinear(m) => spec.moving_avg = m.kernel(),
            AnyModel::NLinear(_) => {}
        }
        spec
    }

    pub fn as_nfcl(&self) -> Option<&NfclModel> {
        match self {
            AnyModel::Nfcl(m) => Some(m),
            _ => None,
        }
    }
}

impl Forecaster for AnyModel {
    fn dims(&self) -> ModelDims {
        match self {
            AnyModel::Nfcl(m) => m.dims(),
            AnyModel::NLinear(m) => m.dims(),
            AnyModel::DLinear(m) => m.dims(),
        }
    }

    fn predict(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        match self {
            AnyModel::Nfcl(m) => m.predict(x),
            AnyModel::NLinear(m) => m.predict(x),
            AnyModel::DLinear(m) => m.predict(x),
        }
    }

    fn loss_and_gradient(&self, x: ArrayView3<f64>, y: ArrayView3<f64>) -> Result<(f64, GradientSet)> {
        match self {
            AnyModel::Nfcl(m) => m.loss_and_gradient(x, y),
            AnyModel::NLinear(m) => m.loss_and_gradient(x, y),
            AnyModel::DLinear(m) => m.loss_and_gradient(x, y),
        }
    }

    fn visit_params(&self, f: &mut dyn FnMut(&ParamMeta, &[f64])) {
        match self {
            AnyModel::Nfcl(m) => m.visit_params(f),
            AnyModel::NLinear(m) => m.visit_params(f),
            AnyModel::DLinear(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&ParamMeta, &mut [f64])) {
        match self {
            AnyModel::Nfcl(m) => m.visit_params_mut(f),
            AnyModel::NLinear(m) => m.visit_params_mut(f),
            AnyModel::DLinear(m) => m.visit_params_mut(f),
        }
    }

    fn after_step(&mut self) {
        if let AnyModel::Nfcl(m) = self {
            m.after_step()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: ModelKind,
    pub dims: ModelDims,
    pub hidden: Vec<usize>,
    pub kernels: Vec<usize>,
    pub padding: Padding,
    pub leaky_slope: f64,
    pub moving_avg: usize,
    pub seed: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &AnyModel) -> Self {
        let spec = model.spec();
        let mut tensors = Vec::new();
        model.visit_params(&mut |meta, data| {
            tensors.push(TensorRecord {
                name: meta.name.clone(),
                shape: meta.shape.clone(),
                data: data.to_vec(),
            })
        });
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            variant: spec.kind,
            dims: spec.dims,
            hidden: spec.hidden,
            kernels: spec.kernels,
            padding: spec.padding,
            leaky_slope: spec.leaky_slope,
            moving_avg: spec.moving_avg,
            seed: model.seed(),
            tensors,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.variant,
            dims: self.dims,
            hidden: self.hidden.clone(),
            kernels: self.kernels.clone(),
            padding: self.padding,
            leaky_slope: self.leaky_slope,
            moving_avg: self.moving_avg,
        }
    }

    pub fn into_model(self) -> Result<AnyModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} version {}",
                self.format, self.version
            )));
        }
        let mut model = self.spec().init(self.seed)?;
        let expected = model.param_metas();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (meta, rec) in expected.iter().zip(&self.tensors) {
            let numel: usize = rec.shape.iter().product();
            if meta.name != rec.name || meta.shape != rec.shape || numel != rec.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?} with {} values",
                    meta.name,
                    meta.shape,
                    rec.name,
                    rec.shape,
                    rec.data.len()
                )));
            }
        }
        let mut idx = 0;
        let tensors = &self.tensors;
        model.visit_params_mut(&mut |_, data| {
            data.copy_from_slice(&tensors[idx].data);
            idx += 1;
        });
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_checkpoint(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    crate::interpret::write_file(path.as_ref(), &Checkpoint::from_model(model).to_json()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_json(&text)?.into_model()
}
