use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Z-score normalisation fitted on training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    /// Population standard deviation; forced to 1 for a constant feature.
    pub std: f64,
    /// Set when the fitted variance was zero.
    pub degenerate: bool,
}

impl Scaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("cannot fit a scaler on zero values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Ok(Self { mean, std: 1.0, degenerate: true });
        }
        Ok(Self { mean, std, degenerate: false })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0, degenerate: false }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Fits a scaler to the demand of training records.
pub fn fit_scaler(train: &[super::QuarterHourRecord]) -> Result<Scaler> {
    let v: Vec<f64> = train.iter().map(|r| r.dep_demand).collect();
    Scaler::fit(&v)
}

pub fn apply_scaler(s: &Scaler, v: f64) -> f64 {
    s.apply(v)
}
