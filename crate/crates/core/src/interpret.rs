//! Exact additive contribution maps.
//!
//! In normalized space every NFCL prediction is a sum over input points of
//! `h(x̃)[i,j] · w[i·L+j, k·T+t]` plus a bias, so the per-point products are a
//! complete and faithful explanation of the prediction for `(k, t)`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::nfcl::NfclModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSpace {
    /// Additive in normalized model space: `values.sum() + bias == ỹ[k,t]`.
    Normalized,
    /// Rescaled to data units with the lookback mean and `beta` folded into `bias`.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMap {
    pub target: (usize, usize),
    /// `K×L` contributions of every input point.
    pub values: Array2<f64>,
    pub bias: f64,
    pub space: MapSpace,
}

impl ContributionMap {
    /// `values.sum() + bias`.
    pub fn total(&self) -> f64 {
        self.values.sum() + self.bias
    }
}

/// Contributions of every input point to every output point for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FullWeightMap {
    /// `(K·L)×(K·T)` products; column `k·T+t` reshaped to `K×L` is the `(k, t)` map.
    pub values: Array2<f64>,
    /// `K·T` biases.
    pub bias: Array1<f64>,
    pub series: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl FullWeightMap {
    pub fn column_map(&self, k: usize, t: usize) -> ContributionMap {
        let q = k * self.horizon + t;
        let values = self
            .values
            .column(q)
            .to_owned()
            .into_shape_with_order((self.series, self.lookback))
            .expect("K·L column");
        ContributionMap {
            target: (k, t),
            values,
            bias: self.bias[q],
            space: MapSpace::Normalized,
        }
    }

    /// Column sums plus bias: the `K·T` normalized prediction.
    pub fn totals(&self) -> Array1<f64> {
        self.values.sum_axis(Axis(0)) + &self.bias
    }
}

fn sample_batch(x: ArrayView2<f64>) -> ndarray::Array3<f64> {
    x.to_owned().insert_axis(Axis(0))
}

fn check_target(model: &NfclModel, k: usize, t: usize) -> Result<()> {
    let d = model.dims();
    if k >= d.series || t >= d.horizon {
        return Err(Error::IndexOutOfRange(format!(
            "target (k={k}, t={t}) outside K={} T={}",
            d.series, d.horizon
        )));
    }
    Ok(())
}

type BranchParts = (Vec<(Array2<f64>, f64)>, crate::nfcl::NormStats);

/// Per-branch `K×L` contributions and biases for target `(k, t)`.
fn branch_contributions(model: &NfclModel, x: ArrayView2<f64>, k: usize, t: usize) -> Result<BranchParts> {
    check_target(model, k, t)?;
    let d = model.dims();
    let (mapped, stats) = model.mapped_inputs(sample_batch(x).view())?;
    let q = k * d.horizon + t;
    let parts = mapped
        .iter()
        .zip(model.branches())
        .map(|(xh, br)| {
            let w = br.head.weight.column(q);
            let values = Array2::from_shape_fn((d.series, d.lookback), |(i, j)| {
                let p = i * d.lookback + j;
                xh[[0, p]] * w[p]
            });
            (values, br.head.bias[q])
        })
        .collect();
    Ok((parts, stats))
}

/// Normalized-space contribution map of input window `x` (`K×L`, raw units) to output `(k, t)`.
pub fn contribution(model: &NfclModel, x: ArrayView2<f64>, k: usize, t: usize) -> Result<ContributionMap> {
    let (parts, _) = branch_contributions(model, x, k, t)?;
    let mut iter = parts.into_iter();
    let (mut values, mut bias) = iter.next().expect("at least one branch");
    for (v, b) in iter {
        values += &v;
        bias += b;
    }
    Ok(ContributionMap {
        target: (k, t),
        values,
        bias,
        space: MapSpace::Normalized,
    })
}

/// The same contributions expressed in data units.
///
/// Each branch's products are multiplied by `std_k / alpha_k`; the branch
/// biases, `beta` offsets and lookback mean are folded into `bias`, so
/// `values.sum() + bias` equals the raw-space prediction.
pub fn contribution_raw(model: &NfclModel, x: ArrayView2<f64>, k: usize, t: usize) -> Result<ContributionMap> {
    let (parts, stats) = branch_contributions(model, x, k, t)?;
    let (sd, mean) = (stats.std[[0, k]], stats.mean[[0, k]]);
    let d = model.dims();
    let mut values = Array2::zeros((d.series, d.lookback));
    let mut bias = 0.0;
    for ((v, b), br) in parts.into_iter().zip(model.branches()) {
        let (a, be) = (br.norm.alpha[k], br.norm.beta[k]);
        values.scaled_add(sd / a, &v);
        bias += (b - be) / a * sd;
    }
    Ok(ContributionMap {
        target: (k, t),
        values,
        bias: bias + mean,
        space: MapSpace::Raw,
    })
}

pub fn full_map(model: &NfclModel, x: ArrayView2<f64>) -> Result<FullWeightMap> {
    let d = model.dims();
    let (mapped, _) = model.mapped_inputs(sample_batch(x).view())?;
    let mut values = Array2::zeros((d.inputs(), d.outputs()));
    let mut bias = Array1::zeros(d.outputs());
    for (xh, br) in mapped.iter().zip(model.branches()) {
        for ((p, q), v) in values.indexed_iter_mut() {
            *v += xh[[0, p]] * br.head.weight[[p, q]];
        }
        bias += &br.head.bias;
    }
    Ok(FullWeightMap {
        values,
        bias,
        series: d.series,
        lookback: d.lookback,
        horizon: d.horizon,
    })
}

/// `K` lines of `L` comma-separated values, then `bias,<value>`.
pub fn map_to_csv(map: &ContributionMap) -> String {
    let mut out = String::new();
    for row in map.values.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.push_str(&format!("bias,{}\n", map.bias));
    out
}

/// Inverse of [`map_to_csv`]: `(values, bias)`.
pub fn parse_map_csv(text: &str) -> Result<(Array2<f64>, f64)> {
    let bad = |m: String| Error::InvalidConfig(format!("contribution csv: {m}"));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut bias = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(rest) = line.strip_prefix("bias,") {
            bias = Some(rest.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("{c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let width = rows.first().map(Vec::len).ok_or_else(|| bad("no rows".into()))?;
    if rows.iter().any(|r| r.len() != width) {
        return Err(bad("ragged rows".into()));
    }
    let height = rows.len();
    let values = Array2::from_shape_vec((height, width), rows.into_iter().flatten().collect())
        .expect("rectangular");
    Ok((values, bias.ok_or_else(|| bad("missing bias line".into()))?))
}

/// Header row of target labels, one row per input point `i{i}_j{j}`, then a bias row.
pub fn full_map_to_csv(map: &FullWeightMap) -> String {
    let mut out = String::from("point");
    for k in 0..map.series {
        for t in 0..map.horizon {
            out.push_str(&format!(",k{k}_t{t}"));
        }
    }
    out.push('\n');
    for (p, row) in map.values.axis_iter(Axis(0)).enumerate() {
        out.push_str(&format!("i{}_j{}", p / map.lookback, p % map.lookback));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.push_str("bias");
    for v in &map.bias {
        out.push_str(&format!(",{v}"));
    }
    out.push('\n');
    out
}

/// Plain `P2` grayscale image, one pixel per input point (`L` wide, `K` tall).
///
/// Zero maps to 127, `+max|v|` to 255 and `-max|v|` to 0.
pub fn map_to_pgm(map: &ContributionMap) -> String {
    let (height, width) = map.values.dim();
    let scale = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pixel = |v: f64| -> u8 {
        if scale == 0.0 {
            return 127;
        }
        let r = v / scale;
        let p = if r >= 0.0 {
            127.0 + (r * 128.0).round()
        } else {
            127.0 + (r * 127.0).round()
        };
        p.clamp(0.0, 255.0) as u8
    };
    let mut out = format!(
        "P2\n# target k={} t={} scale={} polarity: 255=+scale 127=0 0=-scale bias={}\n{} {}\n255\n",
        map.target.0, map.target.1, scale, map.bias, width, height
    );
    for row in map.values.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|&v| pixel(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

impl MapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::Csv => "csv",
            MapFormat::Pgm => "pgm",
        }
    }
}

pub fn export_map(map: &ContributionMap, format: MapFormat, path: impl AsRef<Path>) -> Result<()> {
    let body = match format {
        MapFormat::Csv => map_to_csv(map),
        MapFormat::Pgm => map_to_pgm(map),
    };
    write_file(path.as_ref(), &body)
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(body.as_bytes()).map_err(io)
}

/// File stem `{dataset}_s{sample}_k{k}_t{t}`.
pub fn map_file_stem(dataset: &str, sample: usize, k: usize, t: usize) -> String {
    format!("{dataset}_s{sample}_k{k}_t{t}")
}
