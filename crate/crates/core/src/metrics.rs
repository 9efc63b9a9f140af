//! Point-forecast error metrics over `B×K×T` batches.

use ndarray::{ArrayView3, Axis};

use crate::error::{shape_err, Error, Result};

fn check(y: &ArrayView3<f64>, y_hat: &ArrayView3<f64>) -> Result<()> {
    if y.dim() != y_hat.dim() {
        return Err(shape_err("metric inputs", y.dim(), y_hat.dim()));
    }
    if y.is_empty() {
        return Err(Error::EmptyData("metrics need at least one element".into()));
    }
    Ok(())
}

fn mean_of(y: ArrayView3<f64>, y_hat: ArrayView3<f64>, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    check(&y, &y_hat)?;
    let n = y.len() as f64;
    Ok(y.iter().zip(y_hat.iter()).map(|(&a, &b)| f(a, b)).sum::<f64>() / n)
}

pub fn mae(y: ArrayView3<f64>, y_hat: ArrayView3<f64>) -> Result<f64> {
    mean_of(y, y_hat, |a, b| (a - b).abs())
}

pub fn mse(y: ArrayView3<f64>, y_hat: ArrayView3<f64>) -> Result<f64> {
    mean_of(y, y_hat, |a, b| (a - b) * (a - b))
}

/// `100 · mean(|y - ŷ| / (|y| + |ŷ|))`, with `0/0` terms counted as zero.
pub fn smape(y: ArrayView3<f64>, y_hat: ArrayView3<f64>) -> Result<f64> {
    mean_of(y, y_hat, |a, b| {
        let denom = a.abs() + b.abs();
        if denom == 0.0 {
            0.0
        } else {
            (a - b).abs() / denom
        }
    })
    .map(|v| 100.0 * v)
}

/// `1 - SS_res / SS_tot`, where `SS_tot` measures each variable against its
/// own mean over every sample and horizon step.
pub fn r2(y: ArrayView3<f64>, y_hat: ArrayView3<f64>) -> Result<f64> {
    check(&y, &y_hat)?;
    let mut ss_tot = 0.0;
    for k in 0..y.dim().1 {
        let var = y.index_axis(Axis(1), k);
        let mean = var.mean().expect("non-empty");
        ss_tot += var.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    /// Percent, in `[0, 200]`.
    pub smape: f64,
    /// `None` when the targets have zero total variance.
    pub r2: Option<f64>,
    pub samples: usize,
    pub series: usize,
    pub horizon: usize,
}

impl MetricsReport {
    pub fn compute(y: ArrayView3<f64>, y_hat: ArrayView3<f64>) -> Result<Self> {
        let (samples, series, horizon) = y.dim();
        let r2 = match r2(y, y_hat) {
            Ok(v) => Some(v),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            mae: mae(y, y_hat)?,
            mse: mse(y, y_hat)?,
            smape: smape(y, y_hat)?,
            r2,
            samples,
            series,
            horizon,
        })
    }

    pub const CSV_HEADER: &'static str = "mae,mse,smape,r2,samples,series,horizon";

    /// One CSV data row matching [`Self::CSV_HEADER`]; an undefined R² prints as `undefined`.
    pub fn csv_row(&self) -> String {
        let r2 = self
            .r2
            .map(|v| v.to_string())
            .unwrap_or_else(|| "undefined".into());
        format!(
            "{},{},{},{},{},{},{}",
            self.mae, self.mse, self.smape, r2, self.samples, self.series, self.horizon
        )
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<8}{:>14}", "metric", "value")?;
        writeln!(f, "{:<8}{:>14.6}", "MAE", self.mae)?;
        writeln!(f, "{:<8}{:>14.6}", "MSE", self.mse)?;
        writeln!(f, "{:<8}{:>14.6}", "SMAPE", self.smape)?;
        match self.r2 {
            Some(v) => writeln!(f, "{:<8}{:>14.6}", "R2", v)?,
            None => writeln!(f, "{:<8}{:>14}", "R2", "undefined (zero variance)")?,
        }
        write!(
            f,
            "({} samples x {} series x {} steps)",
            self.samples, self.series, self.horizon
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((1, 1, xs.len()), xs.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let y = v(&[1.0, -2.0, 3.5]);
        assert_eq!(mae(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(mse(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(smape(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(r2(y.view(), y.view()).unwrap(), 1.0);
    }

    #[test]
    fn two_element_hand_sums() {
        let (y, p) = (v(&[1.0, 2.0]), v(&[2.0, 4.0]));
        assert_eq!(mae(y.view(), p.view()).unwrap(), 1.5);
        assert_eq!(mse(y.view(), p.view()).unwrap(), 2.5);
    }

    #[test]
    fn smape_edges() {
        assert_eq!(smape(v(&[1.0]).view(), v(&[1.0]).view()).unwrap(), 0.0);
        assert_eq!(smape(v(&[1.0]).view(), v(&[0.0]).view()).unwrap(), 100.0);
        assert_eq!(smape(v(&[-1.0]).view(), v(&[1.0]).view()).unwrap(), 100.0);
        assert_eq!(smape(v(&[0.0]).view(), v(&[0.0]).view()).unwrap(), 0.0);
    }

    #[test]
    fn r2_cases() {
        assert_eq!(r2(v(&[1.0, 2.0, 3.0]).view(), v(&[1.0, 2.0, 2.0]).view()).unwrap(), 0.5);
        // per-variable mean prediction scores zero
        let y = array![[[1.0, 3.0], [10.0, 20.0]], [[2.0, 6.0], [30.0, 40.0]]];
        let mut p = y.clone();
        for k in 0..2 {
            let m = y.index_axis(Axis(1), k).mean().unwrap();
            p.index_axis_mut(Axis(1), k).fill(m);
        }
        assert!(r2(y.view(), p.view()).unwrap().abs() < 1e-15);
        assert!(matches!(
            r2(v(&[2.0, 2.0]).view(), v(&[1.0, 2.0]).view()),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn report_sentinel_and_errors() {
        let r = MetricsReport::compute(v(&[2.0, 2.0]).view(), v(&[1.0, 2.0]).view()).unwrap();
        assert_eq!(r.r2, None);
        assert!(r.csv_row().contains("undefined"));
        assert!(mae(v(&[1.0]).view(), v(&[1.0, 2.0]).view()).is_err());
        let empty = Array3::<f64>::zeros((0, 1, 1));
        assert!(mse(empty.view(), empty.view()).is_err());
    }

    #[test]
    fn sample_order_is_irrelevant() {
        let y = array![[[1.0, 2.0]], [[3.0, -1.0]], [[0.5, 0.0]]];
        let p = array![[[1.5, 2.0]], [[2.0, -1.0]], [[0.0, 1.0]]];
        let order = [2, 0, 1];
        let (ys, ps) = (y.select(Axis(0), &order), p.select(Axis(0), &order));
        let a = MetricsReport::compute(y.view(), p.view()).unwrap();
        let b = MetricsReport::compute(ys.view(), ps.view()).unwrap();
        assert!((a.mae - b.mae).abs() < 1e-15);
        assert!((a.mse - b.mse).abs() < 1e-15);
        assert!((a.smape - b.smape).abs() < 1e-12);
        assert!((a.r2.unwrap() - b.r2.unwrap()).abs() < 1e-12);
    }

    fn pair() -> impl Strategy<Value = (Array3<f64>, Array3<f64>)> {
        (1usize..4, 1usize..3, 1usize..4).prop_flat_map(|(b, k, t)| {
            let n = b * k * t;
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(a, c)| {
                    (
                        Array3::from_shape_vec((b, k, t), a).unwrap(),
                        Array3::from_shape_vec((b, k, t), c).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn jensen_and_bounds((y, p) in pair()) {
            let m = mae(y.view(), p.view()).unwrap();
            prop_assert!(m * m <= mse(y.view(), p.view()).unwrap() * (1.0 + 1e-12) + 1e-300);
            let s = smape(y.view(), p.view()).unwrap();
            prop_assert!((0.0..=200.0).contains(&s));
            prop_assert!((s - smape(p.view(), y.view()).unwrap()).abs() < 1e-9);
            if let Ok(r) = r2(y.view(), p.view()) {
                prop_assert!(r <= 1.0);
            }
        }

        #[test]
        fn doubled_data_same_metrics((y, p) in pair()) {
            let yy = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
            let pp = ndarray::concatenate(Axis(0), &[p.view(), p.view()]).unwrap();
            let a = MetricsReport::compute(y.view(), p.view()).unwrap();
            let b = MetricsReport::compute(yy.view(), pp.view()).unwrap();
            prop_assert!((a.mae - b.mae).abs() <= 1e-12 * a.mae.max(1.0));
            prop_assert!((a.mse - b.mse).abs() <= 1e-12 * a.mse.max(1.0));
            prop_assert!((a.smape - b.smape).abs() <= 1e-10);
            match (a.r2, b.r2) {
                (Some(x), Some(z)) => prop_assert!((x - z).abs() <= 1e-9 * x.abs().max(1.0)),
                (None, None) => {}
                other => prop_assert!(false, "r2 definedness differs: {:?}", other),
            }
        }
    }
}
