use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{SupervisedWindow, CALENDAR_FEATURES};
use crate::scalar::Scalar;

use super::qr::least_squares;

/// Which inputs the regression sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearFeatures {
    pub n_lag: usize,
    pub n_look_ahead: usize,
    /// Include the past swim counts.
    pub swim: bool,
    /// Include calendar one-hots of the first target slice.
    pub calendar: bool,
}

impl LinearFeatures {
    /// Width of the flattened feature vector (without intercept).
    pub fn width(&self) -> usize {
        let cal: usize = CALENDAR_FEATURES.iter().map(|(_, c)| c - 1).sum();
        self.n_lag * (1 + self.swim as usize) + if self.calendar { cal } else { 0 }
    }

    /// Flattens one window: past demand, past swim counts (missing → 0) and
    /// reference-coded calendar one-hots (the first level of each feature is
    /// dropped).
    pub fn extract(&self, w: &SupervisedWindow) -> Result<Vec<f64>> {
        if w.n_lag() != self.n_lag || w.future_f.len() != self.n_look_ahead {
            return Err(Error::contract(format!(
                "window has n_lag {} / n_look_ahead {}, model expects {} / {}",
                w.n_lag(),
                w.future_f.len(),
                self.n_lag,
                self.n_look_ahead
            )));
        }
        let mut f = Vec::with_capacity(self.width());
        f.extend_from_slice(&w.past_y);
        if self.swim {
            f.extend((0..self.n_lag).map(|k| w.swim_at(k).unwrap_or(0.0)));
        }
        if self.calendar {
            let ids = w.future_f[0].calendar.category_ids();
            for ((_, card), id) in CALENDAR_FEATURES.iter().zip(ids) {
                f.extend((1..*card).map(|level| if level == id { 1.0 } else { 0.0 }));
            }
        }
        Ok(f)
    }
}

/// Direct multi-horizon linear regression: one coefficient vector and
/// intercept per horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T> {
    pub features: Option<LinearFeatures>,
    /// `τ_max` vectors of `d` weights.
    pub weights: Vec<Vec<T>>,
    pub intercepts: Vec<T>,
}

/// Ordinary least squares per horizon. `features` is `[n×d]`, `targets` is
/// `[n×τ_max]`; an intercept column is added.
pub fn fit_linear_regression<T: Scalar>(features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<LinearModel<T>> {
    let n = features.len();
    if n == 0 || targets.len() != n {
        return Err(Error::contract(format!("{n} feature rows but {} target rows", targets.len())));
    }
    let d = features[0].len();
    let k = targets[0].len();
    if n <= d {
        return Err(Error::contract(format!("linear regression needs n > d (n = {n}, d = {d})")));
    }
    if k == 0 || targets.iter().any(|t| t.len() != k) || features.iter().any(|f| f.len() != d) {
        return Err(Error::contract("ragged feature or target rows"));
    }
    let mut a = Vec::with_capacity(n * (d + 1));
    for row in features {
        a.push(T::one());
        a.extend(row.iter().map(|v| T::of(*v)));
    }
    let b: Vec<T> = targets.iter().flatten().map(|v| T::of(*v)).collect();
    let sol = least_squares(&a, n, d + 1, &b, k)?;
    let mut weights = Vec::with_capacity(k);
    let mut intercepts = Vec::with_capacity(k);
    for h in 0..k {
        let col = sol.column(h);
        intercepts.push(col[0]);
        weights.push(col[1..].to_vec());
    }
    Ok(LinearModel { features: None, weights, intercepts })
}

impl<T: Scalar> LinearModel<T> {
    /// Fits on supervised windows using the given feature layout.
    pub fn fit_windows(spec: LinearFeatures, windows: &[SupervisedWindow]) -> Result<Self> {
        let x = windows.iter().map(|w| spec.extract(w)).collect::<Result<Vec<_>>>()?;
        let y: Vec<Vec<f64>> = windows.iter().map(|w| w.targets.clone()).collect();
        let mut m = fit_linear_regression(&x, &y)?;
        m.features = Some(spec);
        Ok(m)
    }

    /// Raw linear predictions for a feature vector, one per horizon.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.weights.first().map_or(0, Vec::len);
        if x.len() != d {
            return Err(Error::Dimension { op: "linear predict", left: vec![d], right: vec![x.len()] });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, c)| {
                let s: T = w.iter().zip(x).map(|(wi, xi)| *wi * T::of(*xi)).sum();
                (s + *c).as_f64()
            })
            .collect())
    }

    /// Demand forecast for a window, clamped at 0.
    pub fn forecast(&self, w: &SupervisedWindow) -> Result<Vec<f64>> {
        let spec = self.features.ok_or_else(|| Error::contract("linear model has no feature layout"))?;
        let raw = self.predict_raw(&spec.extract(w)?)?;
        Ok(raw.into_iter().map(|v| v.max(0.0)).collect())
    }
}
