//! Error metrics, temporal aggregation and the model comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{format_ts, is_slice_boundary, SLICES_PER_DAY, SLICES_PER_HOUR};

/// Pooled error metrics on the count scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub explained_variance: f64,
    /// Number of scored values.
    pub n: usize,
}

fn population_variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// mse, mae and `1 − Var(actual − predicted)/Var(actual)`.
///
/// A constant `actual` gives explained variance 1 when every residual is
/// zero and 0 otherwise.
pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricsReport> {
    if actual.len() != predicted.len() {
        return Err(Error::contract(format!("{} actual values but {} predictions", actual.len(), predicted.len())));
    }
    if actual.is_empty() {
        return Err(Error::contract("no values to score"));
    }
    let n = actual.len() as f64;
    let resid = actual.iter().zip(predicted).map(|(a, p)| a - p);
    let mse = resid.clone().map(|r| r * r).sum::<f64>() / n;
    let mae = resid.clone().map(f64::abs).sum::<f64>() / n;
    let var_a = population_variance(actual.iter().copied());
    let explained_variance = if var_a == 0.0 {
        if resid.clone().all(|r| r == 0.0) {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - population_variance(resid) / var_a
    };
    Ok(MetricsReport { mse, mae, explained_variance, n: actual.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quarter,
    Hourly,
    Daily,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Quarter, Level::Hourly, Level::Daily];

    fn bucket(self) -> (Duration, usize) {
        match self {
            Level::Quarter => (Duration::minutes(15), 1),
            Level::Hourly => (Duration::hours(1), SLICES_PER_HOUR),
            Level::Daily => (Duration::days(1), SLICES_PER_DAY),
        }
    }
}

/// Sums quarter-hour values into clock hours or UTC days. Buckets missing any
/// of their slices are dropped. Values within a bucket are added in time
/// order.
pub fn aggregate(series: &[(DateTime<Utc>, f64)], level: Level) -> Result<Vec<(DateTime<Utc>, f64)>> {
    let (width, count) = level.bucket();
    let mut buckets: BTreeMap<DateTime<Utc>, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    for (ts, v) in series {
        if !is_slice_boundary(ts) {
            return Err(Error::contract(format!("{} is not on a 15-minute boundary", format_ts(ts))));
        }
        let start =
            ts.duration_trunc(width).map_err(|e| Error::contract(format!("cannot bucket {}: {e}", format_ts(ts))))?;
        buckets.entry(start).or_default().push((*ts, *v));
    }
    let mut out = Vec::with_capacity(buckets.len());
    for (start, mut members) in buckets {
        members.sort_by_key(|m| m.0);
        members.dedup_by_key(|m| m.0);
        if members.len() == count {
            out.push((start, members.iter().map(|m| m.1).sum()));
        }
    }
    Ok(out)
}

/// Signed integer percentage by which `mse_model` improves on
/// `mse_reference`: `round((ref − model)/ref · 100)`.
pub fn mse_comparison(mse_model: f64, mse_reference: f64) -> Result<i64> {
    if !(mse_reference > 0.0) {
        return Err(Error::contract("reference mse must be positive"));
    }
    Ok(((mse_reference - mse_model) / mse_reference * 100.0).round() as i64)
}

/// One model's forecasts over the test range: for every origin, the target
/// timestamps, actuals and predictions of each horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RollingForecasts {
    pub origins: Vec<ScoredOrigin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredOrigin {
    pub origin: DateTime<Utc>,
    pub times: Vec<DateTime<Utc>>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl RollingForecasts {
    /// Number of (origin, horizon) pairs.
    pub fn n_pairs(&self) -> usize {
        self.origins.iter().map(|o| o.actual.len()).sum()
    }

    fn horizons(&self) -> usize {
        self.origins.iter().map(|o| o.actual.len()).max().unwrap_or(0)
    }

    /// Metrics pooled over every horizon. Above quarter level, each
    /// horizon's forecasts form their own target-time series that is
    /// aggregated before scoring.
    pub fn score(&self, level: Level) -> Result<Option<MetricsReport>> {
        let mut actual = Vec::new();
        let mut predicted = Vec::new();
        for h in 0..self.horizons() {
            let mut a_series = Vec::new();
            let mut p_series = Vec::new();
            for o in &self.origins {
                if h < o.actual.len() {
                    a_series.push((o.times[h], o.actual[h]));
                    p_series.push((o.times[h], o.predicted[h]));
                }
            }
            if level == Level::Quarter {
                actual.extend(a_series.iter().map(|x| x.1));
                predicted.extend(p_series.iter().map(|x| x.1));
            } else {
                actual.extend(aggregate(&a_series, level)?.into_iter().map(|x| x.1));
                predicted.extend(aggregate(&p_series, level)?.into_iter().map(|x| x.1));
            }
        }
        if actual.is_empty() {
            return Ok(None);
        }
        compute_metrics(&actual, &predicted).map(Some)
    }

    /// Writes `timestamp,actual,predicted`, one row per (origin, horizon).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map = |e: csv::Error| Error::contract(format!("csv write: {e}"));
        w.write_record(["timestamp", "actual", "predicted"]).map_err(map)?;
        for o in &self.origins {
            for ((t, a), p) in o.times.iter().zip(&o.actual).zip(&o.predicted) {
                w.write_record([format_ts(t), a.to_string(), p.to_string()]).map_err(map)?;
            }
        }
        w.flush().map_err(|e| Error::contract(format!("csv write: {e}")))?;
        Ok(())
    }
}

/// Metrics at the three aggregation levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub quarter: MetricsReport,
    pub hourly: Option<MetricsReport>,
    pub daily: Option<MetricsReport>,
}

/// The machine-readable output of evaluating one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub data_label: String,
    pub model_label: String,
    pub n_lag: usize,
    pub n_look_ahead: usize,
    /// How values were pooled before scoring.
    pub pooling: String,
    pub n_origins: usize,
    pub metrics: LevelMetrics,
}

pub const POOLING: &str = "all horizons and all test origins pooled";

impl EvaluationReport {
    pub fn from_forecasts(
        data_label: &str,
        model_label: &str,
        n_lag: usize,
        n_look_ahead: usize,
        forecasts: &RollingForecasts,
    ) -> Result<Self> {
        let quarter = forecasts.score(Level::Quarter)?.ok_or_else(|| Error::contract("no forecasts to score"))?;
        Ok(Self {
            data_label: data_label.to_string(),
            model_label: model_label.to_string(),
            n_lag,
            n_look_ahead,
            pooling: POOLING.to_string(),
            n_origins: forecasts.origins.len(),
            metrics: LevelMetrics {
                quarter,
                hourly: forecasts.score(Level::Hourly)?,
                daily: forecasts.score(Level::Daily)?,
            },
        })
    }
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub data_label: String,
    pub model_label: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub n_lag: usize,
    pub n_look_ahead: usize,
    pub mse_comparison_pct: i64,
}

/// Comparison input: labels, metrics and window configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonInput {
    pub data_label: String,
    pub model_label: String,
    pub metrics: MetricsReport,
    pub n_lag: usize,
    pub n_look_ahead: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Index (in input order) of the reference row.
    pub reference: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Builds the table. The reference is the first row with the minimum mse; its
/// `mse_comparison_pct` is 0. With `sort_by_mse_desc`, rows are listed from
/// worst to best.
pub fn comparison_table(inputs: &[ComparisonInput], sort_by_mse_desc: bool) -> Result<ComparisonTable> {
    let reference = inputs
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, r)| match best {
            Some((_, m)) if m <= r.metrics.mse => best,
            _ => Some((i, r.metrics.mse)),
        })
        .ok_or_else(|| Error::contract("comparison needs at least one row"))?;
    let mut rows = inputs
        .iter()
        .map(|r| {
            Ok(ComparisonRow {
                data_label: r.data_label.clone(),
                model_label: r.model_label.clone(),
                metrics: r.metrics,
                n_lag: r.n_lag,
                n_look_ahead: r.n_look_ahead,
                mse_comparison_pct: mse_comparison(r.metrics.mse, reference.1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if sort_by_mse_desc {
        rows.sort_by(|a, b| b.metrics.mse.total_cmp(&a.metrics.mse));
    }
    Ok(ComparisonTable { reference: reference.0, rows })
}

impl ComparisonTable {
    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let header = ["data", "model", "mse", "mae", "explained_variance", "n_lag", "n_look_ahead", "mse_comparison"];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.data_label.clone(),
                    r.model_label.clone(),
                    format!("{:.2}", r.metrics.mse),
                    format!("{:.2}", r.metrics.mae),
                    format!("{:.2}", r.metrics.explained_variance),
                    r.n_lag.to_string(),
                    r.n_look_ahead.to_string(),
                    format!("{}%", r.mse_comparison_pct),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header.map(String::from));
        line(&mut out, &widths.map(|w| "-".repeat(w)));
        for row in &cells {
            line(&mut out, row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{parse_ts, SLICE};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.explained_variance), (0.0, 0.0, 1.0));

        let m = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(close(m.mse, 2.0 / 3.0) && close(m.mae, 2.0 / 3.0) && close(m.explained_variance, 0.0));

        let m = compute_metrics(&[0.0, 2.0], &[0.0, 1.0]).unwrap();
        assert!(close(m.mse, 0.5) && close(m.mae, 0.5) && close(m.explained_variance, 0.75));
        assert_eq!(m.n, 2);
    }

    #[test]
    fn metric_errors_and_constant_actuals() {
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(compute_metrics(&[3.0, 3.0], &[3.0, 3.0]).unwrap().explained_variance, 1.0);
        assert_eq!(compute_metrics(&[3.0, 3.0], &[3.0, 4.0]).unwrap().explained_variance, 0.0);
    }

    fn quarters(start: &str, values: &[f64]) -> Vec<(DateTime<Utc>, f64)> {
        let t0 = parse_ts(start).unwrap();
        values.iter().enumerate().map(|(i, v)| (t0 + SLICE * i as i32, *v)).collect()
    }

    #[test]
    fn aggregation_examples() {
        let h = aggregate(&quarters("2020-01-01T05:00:00Z", &[1.0, 2.0, 3.0, 4.0]), Level::Hourly).unwrap();
        assert_eq!(h, vec![(parse_ts("2020-01-01T05:00:00Z").unwrap(), 10.0)]);

        let d = aggregate(&quarters("2020-01-02T00:00:00Z", &[1.0; 96]), Level::Daily).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].1, 96.0);

        let mid = aggregate(&quarters("2020-01-01T05:30:00Z", &[1.0; 6]), Level::Hourly).unwrap();
        assert_eq!(mid, vec![(parse_ts("2020-01-01T06:00:00Z").unwrap(), 4.0)]);

        let off = vec![(parse_ts("2020-01-01T05:10:00Z").unwrap(), 1.0)];
        assert!(aggregate(&off, Level::Hourly).is_err());
    }

    #[test]
    fn comparison_percentages() {
        assert_eq!(mse_comparison(8.91, 5.49).unwrap(), -62);
        assert_eq!(mse_comparison(7.63, 5.49).unwrap(), -39);
        assert_eq!(mse_comparison(5.49, 5.49).unwrap(), 0);
        assert!(mse_comparison(1.0, 0.0).is_err());
    }

    fn input(label: &str, mse: f64) -> ComparisonInput {
        ComparisonInput {
            data_label: "ASPM".into(),
            model_label: label.into(),
            metrics: MetricsReport { mse, mae: 1.0, explained_variance: 0.5, n: 10 },
            n_lag: 10,
            n_look_ahead: 8,
        }
    }

    #[test]
    fn table_reference_and_ties() {
        let t = comparison_table(&[input("only", 3.0)], false).unwrap();
        assert_eq!(t.rows[0].mse_comparison_pct, 0);

        let t = comparison_table(&[input("a", 4.0), input("b", 2.0), input("c", 2.0)], false).unwrap();
        assert_eq!(t.reference, 1);
        assert_eq!(t.rows[0].mse_comparison_pct, -100);

        let t = comparison_table(&[input("a", 1.0), input("b", 4.0), input("c", 2.0)], true).unwrap();
        let order: Vec<_> = t.rows.iter().map(|r| r.model_label.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
        assert!(comparison_table(&[], false).is_err());
        assert!(t.render().lines().next().unwrap().starts_with("data"));
    }
}
