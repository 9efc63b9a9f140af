//! Command-line driver: train, evaluate, predict, explain, verify and inspect.
//!
//! A run directory looks like
//!
//! ```text
//! <out_dir>/
//!   config.toml                  resolved configuration of the last `train`
//!   checkpoints/seed-<s>.json    best-validation model per seed
//!   reports/train-seed-<s>.csv   epoch,train_mse,val_mse
//!   reports/train-summary.csv    one row per seed
//!   reports/metrics-<name>.csv   metrics of one checkpoint
//!   reports/metrics.csv          one row per evaluated checkpoint
//!   reports/predictions-<name>.csv
//!   maps/<name>/<dataset>_s<i>_k<k>_t<t>.{csv,pgm}
//!   maps/<name>/<dataset>_s<i>_full.csv
//! ```

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{s, Axis};

use nfcl_core::checkpoint::{load_checkpoint, save_checkpoint, AnyModel};
use nfcl_core::datapipe::{load_csv, prepare, PreparedData, TimeSeriesDataset, WindowBatch};
use nfcl_core::forecaster::Forecaster;
use nfcl_core::interpret::{
    contribution, contribution_raw, export_map, full_map, full_map_to_csv, map_file_stem, MapFormat,
};
use nfcl_core::metrics::MetricsReport;
use nfcl_core::optim::{train, TrainReport};
use nfcl_core::verify::{render_table, run_battery, VerifyOptions};

pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "nfcl", version, about = "Train, evaluate and explain NFCL forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Segment {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Pgm,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and keep the best-validation checkpoint of each.
    Train {
        #[command(flatten)]
        run: Overrides,
    },
    /// Score checkpoints on a split in scaled space.
    Evaluate {
        #[command(flatten)]
        run: Overrides,
        /// A single checkpoint; defaults to every seed of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Segment,
    },
    /// Write forecasts for a split, or for the steps after the end of the data.
    Predict {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Segment,
        /// Forecast the horizon after the final lookback window of the whole series.
        #[arg(long)]
        latest: bool,
        /// Undo the train-set scaling before writing.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export contribution maps of one window.
    Explain {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Segment,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Target series; all series when omitted.
        #[arg(long)]
        k: Option<usize>,
        /// Target horizon step; all steps when omitted.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Express contributions in model-input units instead of normalized space.
        #[arg(long)]
        raw: bool,
        /// Re-check that every map sums to its prediction; exit nonzero otherwise.
        #[arg(long)]
        check_faithfulness: bool,
    },
    /// Run the built-in verification battery.
    Verify {
        #[arg(long, default_value_t = nfcl_core::nfcl::DEFAULT_LEAKY_SLOPE)]
        leaky_slope: f64,
        #[arg(long, default_value_t = 100)]
        gradient_configs: usize,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Describe a checkpoint, or the dataset and model a configuration would use.
    Inspect {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Runs one command. `Ok(false)` means it completed but a check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { run } => cmd_train(&run.resolve()?).map(|_| true),
        Command::Evaluate { run, checkpoint, split } => {
            cmd_evaluate(&run.resolve()?, checkpoint.as_deref(), split).map(|_| true)
        }
        Command::Predict {
            run,
            checkpoint,
            split,
            latest,
            raw,
            output,
        } => cmd_predict(&run.resolve()?, checkpoint.as_deref(), split, latest, raw, output).map(|_| true),
        Command::Explain {
            run,
            checkpoint,
            split,
            sample,
            k,
            t,
            format,
            raw,
            check_faithfulness,
        } => cmd_explain(
            &run.resolve()?,
            &ExplainRequest {
                checkpoint,
                split,
                sample,
                k,
                t,
                format,
                raw,
                check_faithfulness,
            },
        ),
        Command::Verify {
            leaky_slope,
            gradient_configs,
            cases,
            seed,
        } => Ok(cmd_verify(&VerifyOptions {
            leaky_slope,
            gradient_configs,
            random_cases: cases,
            seed,
        })),
        Command::Inspect { run, checkpoint } => cmd_inspect(&run.resolve()?, checkpoint.as_deref()).map(|_| true),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("write: cannot create {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("write: cannot write {}", path.display()))
}

fn load_data(cfg: &RunConfig) -> Result<TimeSeriesDataset> {
    if cfg.data.as_os_str().is_empty() {
        bail!("load data: no data file given (use --data or `data` in the config)");
    }
    load_csv(&cfg.data, cfg.date_col.as_deref()).with_context(|| format!("load data: {}", cfg.data.display()))
}

fn prepare_data(cfg: &RunConfig, ds: &TimeSeriesDataset) -> Result<PreparedData> {
    prepare(ds, &cfg.split(), cfg.lookback, cfg.horizon)
        .with_context(|| format!("prepare windows: L={}, T={}", cfg.lookback, cfg.horizon))
}

fn segment(data: &PreparedData, split: Segment) -> &WindowBatch {
    match split {
        Segment::Train => &data.train,
        Segment::Val => &data.val,
        Segment::Test => &data.test,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainReport>> {
    let ds = load_data(cfg)?;
    let data = prepare_data(cfg, &ds)?;
    let spec = cfg.model_spec(ds.series())?;
    write(&cfg.out_dir.join("config.toml"), &cfg.to_toml()?)?;
    let mut summary = String::from("seed,best_epoch,best_val_mse,stopped_epoch,stop_reason\n");
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let stage = || format!("train seed {seed}");
        let model = spec.init(seed).with_context(stage)?;
        let report_path = cfg.reports_dir().join(format!("train-seed-{seed}.csv"));
        let (best, report) = match train(&model, &data.train, &data.val, &cfg.train_config(seed)) {
            Ok(done) => done,
            Err(nfcl_core::Error::Diverged { epoch, report }) => {
                write(&report_path, &report.to_csv())?;
                bail!("{}: diverged at epoch {epoch}; history in {}", stage(), report_path.display());
            }
            Err(e) => return Err(anyhow!(e).context(stage())),
        };
        let ckpt = cfg.checkpoint_path(seed);
        if let Some(dir) = ckpt.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("write: cannot create {}", dir.display()))?;
        }
        save_checkpoint(&best, &ckpt).with_context(|| format!("save checkpoint: {}", ckpt.display()))?;
        write(&report_path, &report.to_csv())?;
        writeln!(
            summary,
            "{seed},{},{},{},{:?}",
            report.best_epoch, report.best_val_mse, report.stopped_epoch, report.stop_reason
        )?;
        println!(
            "seed {seed}: best epoch {} of {}, val MSE {:.6}",
            report.best_epoch, report.stopped_epoch, report.best_val_mse
        );
        reports.push(report);
    }
    write(&cfg.reports_dir().join("train-summary.csv"), &summary)?;
    let vals: Vec<f64> = reports.iter().map(|r| r.best_val_mse).collect();
    let (mean, std) = mean_std(&vals);
    println!("val MSE over {} seeds: {mean:.6} ± {std:.6}", vals.len());
    Ok(reports)
}

/// Checkpoints named on the command line, or every seed of the run.
fn checkpoints(cfg: &RunConfig, explicit: Option<&Path>) -> Vec<(String, PathBuf)> {
    match explicit {
        Some(p) => {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
            vec![(name, p.to_path_buf())]
        }
        None => cfg.seeds.iter().map(|s| (format!("seed-{s}"), cfg.checkpoint_path(*s))).collect(),
    }
}

fn load_model(path: &Path, cfg: &RunConfig, series: usize) -> Result<AnyModel> {
    let model = load_checkpoint(path).with_context(|| format!("load checkpoint: {}", path.display()))?;
    let d = model.dims();
    if (d.series, d.lookback, d.horizon) != (series, cfg.lookback, cfg.horizon) {
        bail!(
            "load checkpoint: {} expects K={}, L={}, T={} but the data and config give K={series}, L={}, T={}",
            path.display(),
            d.series,
            d.lookback,
            d.horizon,
            cfg.lookback,
            cfg.horizon
        );
    }
    Ok(model)
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split: Segment) -> Result<Vec<MetricsReport>> {
    let ds = load_data(cfg)?;
    let data = prepare_data(cfg, &ds)?;
    let batch = segment(&data, split);
    let mut table = format!("checkpoint,{}\n", MetricsReport::CSV_HEADER);
    let mut reports = Vec::new();
    for (name, path) in checkpoints(cfg, checkpoint) {
        let model = load_model(&path, cfg, ds.series())?;
        let pred = model.predict(batch.x.view()).with_context(|| format!("evaluate {name}"))?;
        let m = MetricsReport::compute(batch.y.view(), pred.view()).with_context(|| format!("evaluate {name}"))?;
        write(
            &cfg.reports_dir().join(format!("metrics-{name}.csv")),
            &format!("{}\n{}\n", MetricsReport::CSV_HEADER, m.csv_row()),
        )?;
        writeln!(table, "{name},{}", m.csv_row())?;
        println!("{name}\n{m}");
        reports.push(m);
    }
    write(&cfg.reports_dir().join("metrics.csv"), &table)?;
    if reports.len() > 1 {
        let (mae, mae_sd) = mean_std(&reports.iter().map(|r| r.mae).collect::<Vec<_>>());
        let (mse, mse_sd) = mean_std(&reports.iter().map(|r| r.mse).collect::<Vec<_>>());
        println!("mean over {} checkpoints: MAE {mae:.4} ± {mae_sd:.4}, MSE {mse:.4} ± {mse_sd:.4}", reports.len());
    }
    Ok(reports)
}

pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split: Segment,
    latest: bool,
    raw: bool,
    output: Option<PathBuf>,
) -> Result<PathBuf> {
    let ds = load_data(cfg)?;
    let data = prepare_data(cfg, &ds)?;
    let (name, path) = checkpoints(cfg, checkpoint).into_iter().next().expect("seeds validated non-empty");
    let model = load_model(&path, cfg, ds.series())?;
    let out = output.unwrap_or_else(|| cfg.reports_dir().join(format!("predictions-{name}.csv")));
    let mut body = String::new();
    if latest {
        let scaled = data.scale.apply(&ds).context("predict: scaling")?;
        let n = scaled.steps();
        let x = scaled
            .values
            .slice(s![.., n - cfg.lookback..])
            .to_owned()
            .insert_axis(Axis(0));
        let mut y = model.predict(x.view()).context("predict")?;
        if raw {
            data.scale.inverse_batch(&mut y).context("predict: unscaling")?;
        }
        body.push_str("series,step,prediction\n");
        for ((_, k, t), v) in y.indexed_iter() {
            writeln!(body, "{},{},{v}", ds.names[k], t + 1)?;
        }
    } else {
        let batch = segment(&data, split);
        let mut y = model.predict(batch.x.view()).context("predict")?;
        let mut target = batch.y.clone();
        if raw {
            data.scale.inverse_batch(&mut y).context("predict: unscaling")?;
            data.scale.inverse_batch(&mut target).context("predict: unscaling")?;
        }
        body.push_str("sample,series,step,target,prediction\n");
        for ((b, k, t), v) in y.indexed_iter() {
            writeln!(body, "{b},{},{},{},{v}", ds.names[k], t + 1, target[[b, k, t]])?;
        }
    }
    write(&out, &body)?;
    println!("wrote {}", out.display());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExplainRequest {
    pub checkpoint: Option<PathBuf>,
    pub split: Segment,
    pub sample: usize,
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub format: Format,
    pub raw: bool,
    pub check_faithfulness: bool,
}

/// Relative tolerance of the map-sum check.
pub const FAITHFULNESS_TOLERANCE: f64 = 1e-9;

pub fn cmd_explain(cfg: &RunConfig, req: &ExplainRequest) -> Result<bool> {
    let ds = load_data(cfg)?;
    let data = prepare_data(cfg, &ds)?;
    let batch = segment(&data, req.split);
    let mut all_faithful = true;
    for (name, path) in checkpoints(cfg, req.checkpoint.as_deref()) {
        let any = load_model(&path, cfg, ds.series())?;
        let model = any
            .as_nfcl()
            .ok_or_else(|| anyhow!("explain: contribution maps need an NFCL model (v, c or d), {name} is {}", any.kind()))?;
        if req.sample >= batch.len() {
            bail!("explain: sample {} out of range, split has {} windows", req.sample, batch.len());
        }
        let d = model.dims();
        for (what, idx, len) in [("k", req.k, d.series), ("t", req.t, d.horizon)] {
            if let Some(v) = idx.filter(|v| *v >= len) {
                bail!("explain: {what} = {v} out of range, expected < {len}");
            }
        }
        let x = batch.x.index_axis(Axis(0), req.sample);
        let window = batch.x.slice(s![req.sample..req.sample + 1, .., ..]);
        let reference = if req.raw {
            model.forward(window)?
        } else {
            model.forward_normalized(window)?.0
        };
        let dir = cfg.maps_dir().join(&name);
        std::fs::create_dir_all(&dir).with_context(|| format!("explain: cannot create {}", dir.display()))?;
        let dataset = cfg.dataset_name();
        let format = match req.format {
            Format::Csv => MapFormat::Csv,
            Format::Pgm => MapFormat::Pgm,
        };
        let ks: Vec<usize> = req.k.map_or_else(|| (0..d.series).collect(), |k| vec![k]);
        let ts: Vec<usize> = req.t.map_or_else(|| (0..d.horizon).collect(), |t| vec![t]);
        let mut worst: f64 = 0.0;
        for &k in &ks {
            for &t in &ts {
                let map = if req.raw {
                    contribution_raw(model, x, k, t)?
                } else {
                    contribution(model, x, k, t)?
                };
                let want = reference[[0, k, t]];
                worst = worst.max((map.total() - want).abs() / map.total().abs().max(want.abs()).max(1e-300));
                let file = dir.join(format!("{}.{}", map_file_stem(&dataset, req.sample, k, t), format.extension()));
                export_map(&map, format, &file).with_context(|| format!("explain: {}", file.display()))?;
            }
        }
        let full = dir.join(format!("{dataset}_s{}_full.csv", req.sample));
        write(&full, &full_map_to_csv(&full_map(model, x)?))?;
        println!("{name}: wrote {} maps and {}", ks.len() * ts.len(), full.display());
        if req.check_faithfulness {
            let ok = worst <= FAITHFULNESS_TOLERANCE;
            println!(
                "{name}: faithfulness {} (max relative error {worst:.3e}, tolerance {FAITHFULNESS_TOLERANCE:.0e})",
                if ok { "PASS" } else { "FAIL" }
            );
            all_faithful &= ok;
        }
    }
    Ok(all_faithful)
}

pub fn cmd_verify(opts: &VerifyOptions) -> bool {
    let results = run_battery(opts);
    println!("{}", render_table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} checks passed", results.len());
    } else {
        println!("{failed} of {} checks failed", results.len());
    }
    failed == 0
}

pub fn cmd_inspect(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    if let Some(path) = checkpoint {
        let model = load_checkpoint(path).with_context(|| format!("load checkpoint: {}", path.display()))?;
        let d = model.dims();
        println!("model       {}", model.kind());
        println!("dims        K={} L={} T={}", d.series, d.lookback, d.horizon);
        println!("seed        {}", model.seed());
        println!("parameters  {}", model.parameter_count());
        for meta in model.param_metas() {
            println!("  {:<28} {:?}", meta.name, meta.shape);
        }
        return Ok(());
    }
    let ds = load_data(cfg)?;
    let data = prepare_data(cfg, &ds)?;
    let spec = cfg.model_spec(ds.series())?;
    println!("data        {}", cfg.data.display());
    println!("series      {} ({})", ds.series(), ds.names.join(", "));
    println!("steps       {}", ds.steps());
    println!(
        "windows     train {}, val {}, test {}",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    println!("model       {} with {} parameters", cfg.model, spec.init(0)?.parameter_count());
    Ok(())
}
