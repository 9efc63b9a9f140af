use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use nfcl_core::checkpoint::{ModelKind, ModelSpec};
use nfcl_core::datapipe::SplitSpec;
use nfcl_core::forecaster::ModelDims;
use nfcl_core::nfcl::{Padding, DEFAULT_LEAKY_SLOPE};
use nfcl_core::optim::TrainConfig;

/// Everything that determines a run. Serialized verbatim as `config.toml` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date_col: Option<String>,
    pub lookback: usize,
    pub horizon: usize,
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub kernels: Vec<usize>,
    pub padding: Padding,
    pub leaky_slope: f64,
    pub moving_avg: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub shuffle: bool,
    pub deterministic: bool,
    pub threads: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SplitSpec::default();
        Self {
            data: PathBuf::new(),
            date_col: None,
            lookback: 24,
            horizon: 6,
            model: ModelKind::C,
            hidden: vec![32],
            kernels: vec![10, 4, 1],
            padding: Padding::Replicate,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            moving_avg: nfcl_core::baselines::DEFAULT_MOVING_AVG,
            train_frac: s.train_frac,
            val_frac: s.val_frac,
            test_frac: s.test_frac,
            lr: t.lr,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
            shuffle: t.shuffle,
            deterministic: t.deterministic,
            threads: t.threads,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs/nfcl"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config: cannot parse {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("config: serialization failed")
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
            shuffle: self.shuffle,
            deterministic: self.deterministic,
            threads: self.threads,
        }
    }

    pub fn model_spec(&self, series: usize) -> Result<ModelSpec> {
        let dims = ModelDims::new(series, self.lookback, self.horizon).context("config")?;
        let mut spec = ModelSpec::new(self.model, dims);
        spec.hidden = self.hidden.clone();
        spec.kernels = self.kernels.clone();
        spec.padding = self.padding;
        spec.leaky_slope = self.leaky_slope;
        spec.moving_avg = self.moving_avg;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("config: seeds must not be empty");
        }
        self.split().validate().context("config")?;
        self.train_config(0).validate().context("config")?;
        ModelDims::new(1, self.lookback, self.horizon).context("config")?;
        Ok(())
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join("checkpoints").join(format!("seed-{seed}.json"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.out_dir.join("maps")
    }

    /// Dataset label used in map file names: the data file stem.
    pub fn dataset_name(&self) -> String {
        self.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }
}

fn parse_padding(s: &str) -> Result<Padding, String> {
    match s {
        "replicate" => Ok(Padding::Replicate),
        "zero" => Ok(Padding::Zero),
        other => Err(format!("unknown padding `{other}` (expected replicate or zero)")),
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: nfcl_core::Error| e.to_string())
}

/// Command-line overrides; each flag shares its name with a [`RunConfig`] field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; flags given alongside it take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub date_col: Option<String>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// v, c, d, nlinear or dlinear.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    /// replicate or zero.
    #[arg(long, value_parser = parse_padding)]
    pub padding: Option<Padding>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[arg(long)]
    pub moving_avg: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub shuffle: Option<bool>,
    #[arg(long)]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    c.$field = v.clone();
                })*
            };
        }
        apply!(
            data, lookback, horizon, model, hidden, kernels, padding, leaky_slope, moving_avg,
            train_frac, val_frac, test_frac, lr, weight_decay, beta1, beta2, eps, batch_size,
            patience, max_epochs, shuffle, deterministic, threads, seeds, out_dir
        );
        if let Some(d) = &self.date_col {
            c.date_col = Some(d.clone());
        }
        c.validate()?;
        Ok(c)
    }
}
