//! CSV ingestion, chronological splitting, train-fitted z-scoring and
//! one-step sliding windows.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};

/// `K` named series over `N` timesteps. Row `k` of `values` is series `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub names: Vec<String>,
    pub values: Array2<f64>,
    pub freq: Option<String>,
    pub origin: Option<String>,
}

impl TimeSeriesDataset {
    pub fn new(names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if names.len() != values.nrows() {
            return Err(shape_err("series names", values.nrows(), names.len()));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyData(format!(
                "dataset must have at least one series and one timestep, got {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "dataset value",
                epoch: None,
            });
        }
        Ok(Self {
            names,
            values,
            freq: None,
            origin: None,
        })
    }

    pub fn series(&self) -> usize {
        self.values.nrows()
    }

    pub fn steps(&self) -> usize {
        self.values.ncols()
    }

    /// Timesteps `[start, end)` as a new dataset with the same metadata.
    pub fn slice_steps(&self, start: usize, end: usize) -> TimeSeriesDataset {
        TimeSeriesDataset {
            names: self.names.clone(),
            values: self.values.slice(s![.., start..end]).to_owned(),
            freq: self.freq.clone(),
            origin: self.origin.clone(),
        }
    }

    fn with_values(&self, values: Array2<f64>) -> TimeSeriesDataset {
        TimeSeriesDataset {
            names: self.names.clone(),
            values,
            freq: self.freq.clone(),
            origin: self.origin.clone(),
        }
    }
}

/// Load a header-first CSV file. Non-date columns become series.
///
/// With `date_col = None` a column named `date` (any case) is dropped if
/// present; with `Some(name)` that column must exist.
pub fn load_csv(path: impl AsRef<Path>, date_col: Option<&str>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();

    let skip = match date_col {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{}: date column `{name}` not found in header",
                path.display()
            ))
        })?),
        None => headers.iter().position(|h| h.eq_ignore_ascii_case("date")),
    };
    let kept: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != skip).collect();
    if kept.is_empty() {
        return Err(Error::EmptyData(format!(
            "{}: no value columns after excluding the date column",
            path.display()
        )));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); kept.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = row + 1;
        if record.len() != headers.len() {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for (slot, &c) in kept.iter().enumerate() {
            let cell = &record[c];
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ParseCell {
                    path: path.to_path_buf(),
                    row,
                    column: headers[c].clone(),
                    value: cell.to_owned(),
                })?;
            columns[slot].push(value);
        }
    }

    let steps = columns[0].len();
    if steps == 0 {
        return Err(Error::EmptyData(format!("{}: no data rows", path.display())));
    }
    let flat: Vec<f64> = columns.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((kept.len(), steps), flat)
        .expect("columns have equal length");
    let names = kept.iter().map(|&c| headers[c].clone()).collect();
    let mut ds = TimeSeriesDataset::new(names, values)?;
    ds.origin = Some(path.display().to_string());
    Ok(ds)
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(f.is_finite() && *f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidSplit(format!(
                "each fraction must lie in (0, 1), got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Boundary indices `(floor(N·train), floor(N·(train+val)))`.
    pub fn boundaries(&self, steps: usize) -> (usize, usize) {
        // The small offset keeps products such as 10 * 0.3 = 2.9999... on the intended integer.
        let floor = |f: f64| ((steps as f64) * f + 1e-9).floor() as usize;
        (
            floor(self.train_frac).min(steps),
            floor(self.train_frac + self.val_frac).min(steps),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TimeSeriesDataset,
    pub val: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

pub fn split_chronological(ds: &TimeSeriesDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = ds.steps();
    let (a, b) = spec.boundaries(n);
    if a == 0 || b == a || b == n {
        return Err(Error::InvalidSplit(format!(
            "{n} steps with {spec:?} leaves an empty segment (sizes {}, {}, {})",
            a,
            b - a,
            n - b
        )));
    }
    Ok(Splits {
        train: ds.slice_steps(0, a),
        val: ds.slice_steps(a, b),
        test: ds.slice_steps(b, n),
    })
}

pub const SCALE_STD_FLOOR: f64 = 1e-8;

/// Per-variable mean and population standard deviation of the training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_scale(train: &TimeSeriesDataset) -> ScaleState {
    let (mean, std) = row_stats(train.values.view(), SCALE_STD_FLOOR);
    ScaleState { mean, std }
}

pub(crate) fn row_stats(values: ArrayView2<f64>, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = values.ncols() as f64;
    values
        .axis_iter(Axis(0))
        .map(|row| {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(floor))
        })
        .unzip()
}

impl ScaleState {
    fn check(&self, ds: &TimeSeriesDataset) -> Result<()> {
        if ds.series() != self.mean.len() {
            return Err(shape_err("scale state", self.mean.len(), ds.series()));
        }
        Ok(())
    }

    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.check(ds)?;
        let mut values = ds.values.clone();
        for (k, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            row.mapv_inplace(|v| (v - m) / s);
        }
        Ok(ds.with_values(values))
    }

    pub fn inverse(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.check(ds)?;
        let mut values = ds.values.clone();
        for (k, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            row.mapv_inplace(|v| v * s + m);
        }
        Ok(ds.with_values(values))
    }

    /// Inverse-scale a `B×K×T` batch of predictions in place.
    pub fn inverse_batch(&self, y: &mut Array3<f64>) -> Result<()> {
        if y.dim().1 != self.mean.len() {
            return Err(shape_err("scale state", self.mean.len(), y.dim().1));
        }
        for mut sample in y.axis_iter_mut(Axis(0)) {
            for (k, mut row) in sample.axis_iter_mut(Axis(0)).enumerate() {
                let (m, s) = (self.mean[k], self.std[k]);
                row.mapv_inplace(|v| v * s + m);
            }
        }
        Ok(())
    }
}

/// Paired histories `x` (`B×K×L`) and targets `y` (`B×K×T`).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    /// Starting timestep of each sample within its source segment.
    pub indices: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Samples at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> WindowBatch {
        WindowBatch {
            x: self.x.select(Axis(0), positions),
            y: self.y.select(Axis(0), positions),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
        }
    }

    /// Concatenate batches along the sample axis.
    pub fn concat(parts: &[&WindowBatch]) -> Result<WindowBatch> {
        let xs: Vec<_> = parts.iter().map(|b| b.x.view()).collect();
        let ys: Vec<_> = parts.iter().map(|b| b.y.view()).collect();
        let x = ndarray::concatenate(Axis(0), &xs)
            .map_err(|e| shape_err("window concat", "matching K×L", e.to_string()))?;
        let y = ndarray::concatenate(Axis(0), &ys)
            .map_err(|e| shape_err("window concat", "matching K×T", e.to_string()))?;
        let indices = parts.iter().flat_map(|b| b.indices.iter().copied()).collect();
        Ok(WindowBatch { x, y, indices })
    }
}

/// One-step sliding windows: sample `i` reads steps `[i, i+L)` and targets `[i+L, i+L+T)`.
pub fn make_windows(
    ds: &TimeSeriesDataset,
    lookback: usize,
    horizon: usize,
) -> Result<WindowBatch> {
    let n = ds.steps();
    if lookback == 0 || horizon == 0 {
        return Err(Error::InvalidConfig(format!(
            "lookback and horizon must be positive, got L={lookback} T={horizon}"
        )));
    }
    if n < lookback + horizon {
        return Err(Error::SegmentTooShort {
            len: n,
            lookback,
            horizon,
        });
    }
    let count = n - lookback - horizon + 1;
    let k = ds.series();
    let mut x = Array3::zeros((count, k, lookback));
    let mut y = Array3::zeros((count, k, horizon));
    for i in 0..count {
        x.slice_mut(s![i, .., ..])
            .assign(&ds.values.slice(s![.., i..i + lookback]));
        y.slice_mut(s![i, .., ..])
            .assign(&ds.values.slice(s![.., i + lookback..i + lookback + horizon]));
    }
    Ok(WindowBatch {
        x,
        y,
        indices: (0..count).collect(),
    })
}

/// Windows of the three chronological segments, all scaled by train statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub scale: ScaleState,
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
}

/// Split, fit scaling on train only, scale every segment with that one state, and window each segment.
pub fn prepare(
    ds: &TimeSeriesDataset,
    split: &SplitSpec,
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData> {
    let parts = split_chronological(ds, split)?;
    let scale = fit_scale(&parts.train);
    let window = |seg: &TimeSeriesDataset| make_windows(&scale.apply(seg)?, lookback, horizon);
    Ok(PreparedData {
        train: window(&parts.train)?,
        val: window(&parts.val)?,
        test: window(&parts.test)?,
        scale,
    })
}
