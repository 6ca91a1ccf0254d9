use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::qr::least_squares;

/// `y_t = c + φ_1·y_{t−1} + … + φ_p·y_{t−p} + ε_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ARModel<T> {
    pub intercept: T,
    /// `φ_1..φ_p`, lag 1 first.
    pub phi: Vec<T>,
    pub residual_std: T,
}

impl<T: Scalar> ARModel<T> {
    pub fn new(intercept: T, phi: Vec<T>, residual_std: T) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::contract("AR order must be ≥ 1"));
        }
        if !(residual_std >= T::zero()) {
            return Err(Error::contract("residual_std must be ≥ 0"));
        }
        Ok(Self { intercept, phi, residual_std })
    }

    pub fn order(&self) -> usize {
        self.phi.len()
    }
}

/// Ordinary least squares on `[1, y_{t−1}, …, y_{t−p}]` over every valid `t`.
/// A constant series yields an intercept-only model.
pub fn fit_ar<T: Scalar>(series: &[f64], p: usize) -> Result<ARModel<T>> {
    if p == 0 {
        return Err(Error::contract("AR order must be ≥ 1"));
    }
    if series.len() <= 2 * p {
        return Err(Error::contract(format!("AR({p}) needs more than {} observations, got {}", 2 * p, series.len())));
    }
    let rows = series.len() - p;
    let first = series[0];
    if series[..series.len() - 1].iter().all(|v| *v == first) {
        let mean = series[p..].iter().sum::<f64>() / rows as f64;
        let var = series[p..].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        return ARModel::new(T::of(mean), vec![T::zero(); p], T::of(var.sqrt()));
    }

    let mut a = Vec::with_capacity(rows * (p + 1));
    let mut b = Vec::with_capacity(rows);
    for t in p..series.len() {
        a.push(T::one());
        a.extend((1..=p).map(|lag| T::of(series[t - lag])));
        b.push(T::of(series[t]));
    }
    let sol = least_squares(&a, rows, p + 1, &b, 1)?;
    let coef = sol.column(0);
    let mut ss = T::zero();
    for (row, y) in a.chunks(p + 1).zip(&b) {
        let fit: T = row.iter().zip(&coef).map(|(x, c)| *x * *c).sum();
        ss += (*y - fit).powi(2);
    }
    let residual_std = (ss / T::of(rows as f64)).sqrt();
    ARModel::new(coef[0], coef[1..].to_vec(), residual_std)
}

/// Recursive multi-step mean forecast from the last `p` values of
/// `history`. Each forecast is fed back unclamped; the returned values are
/// clamped at 0.
pub fn ar_forecast<T: Scalar>(model: &ARModel<T>, history: &[f64], tau_max: usize) -> Result<Vec<f64>> {
    let p = model.order();
    if history.len() < p {
        return Err(Error::contract(format!("AR({p}) forecast needs {p} history values, got {}", history.len())));
    }
    // lags[0] is the most recent value
    let mut lags: Vec<T> = history[history.len() - p..].iter().rev().map(|v| T::of(*v)).collect();
    let mut out = Vec::with_capacity(tau_max);
    for _ in 0..tau_max {
        let next = model.intercept + model.phi.iter().zip(&lags).map(|(f, y)| *f * *y).sum::<T>();
        lags.pop();
        lags.insert(0, next);
        out.push(next.as_f64().max(0.0));
    }
    Ok(out)
}
