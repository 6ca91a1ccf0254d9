//! Householder QR least squares.

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ridge term used when the design is numerically rank deficient.
pub const RIDGE_JITTER: f64 = 1e-8;

/// Solution of `min ‖A·X − B‖` for `A: [n×d]`, `B: [n×k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares<T> {
    /// `[d×k]`, row-major.
    pub coef: Vec<T>,
    pub d: usize,
    pub k: usize,
    /// True when the ridge fallback was used.
    pub ridged: bool,
}

impl<T: Scalar> LeastSquares<T> {
    /// Coefficients of right-hand side `j`.
    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.d).map(|i| self.coef[i * self.k + j]).collect()
    }
}

/// Factorises a column-major copy of `A` in place and applies `Qᵀ` to `B`.
/// Returns the diagonal of `R`.
fn householder<T: Scalar>(a: &mut [T], n: usize, d: usize, b: &mut [T], k: usize) -> Vec<T> {
    let mut diag = Vec::with_capacity(d);
    for j in 0..d.min(n) {
        let col = &mut a[j * n..(j + 1) * n];
        let norm = col[j..].iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm == T::zero() {
            diag.push(T::zero());
            continue;
        }
        let alpha = if col[j] > T::zero() { -norm } else { norm };
        // v = x − alpha·e1, stored in col[j..]
        col[j] -= alpha;
        let vnorm2 = col[j..].iter().map(|v| *v * *v).sum::<T>();
        let v: Vec<T> = col[j..].to_vec();
        col[j] = alpha;
        for x in col[j + 1..].iter_mut() {
            *x = T::zero();
        }
        let reflect = |target: &mut [T]| {
            let dot: T = v.iter().zip(&target[j..]).map(|(a, b)| *a * *b).sum();
            let s = (dot + dot) / vnorm2;
            for (t, vi) in target[j..].iter_mut().zip(&v) {
                *t -= s * *vi;
            }
        };
        for c in j + 1..d {
            reflect(&mut a[c * n..(c + 1) * n]);
        }
        for c in 0..k {
            reflect(&mut b[c * n..(c + 1) * n]);
        }
        diag.push(alpha);
    }
    diag
}

fn solve_once<T: Scalar>(a: &[T], n: usize, d: usize, b: &[T], k: usize) -> (Vec<T>, Vec<T>) {
    // column-major working copies
    let mut ac = vec![T::zero(); n * d];
    for i in 0..n {
        for j in 0..d {
            ac[j * n + i] = a[i * d + j];
        }
    }
    let mut bc = vec![T::zero(); n * k];
    for i in 0..n {
        for j in 0..k {
            bc[j * n + i] = b[i * k + j];
        }
    }
    let diag = householder(&mut ac, n, d, &mut bc, k);
    let mut coef = vec![T::zero(); d * k];
    for c in 0..k {
        for i in (0..d).rev() {
            let mut s = bc[c * n + i];
            for j in i + 1..d {
                s -= ac[j * n + i] * coef[j * k + c];
            }
            let r = ac[i * n + i];
            coef[i * k + c] = if r == T::zero() { T::zero() } else { s / r };
        }
    }
    (coef, diag)
}

/// Least squares via Householder QR. When some `|R_ii|` falls below
/// `max(n, d)·ε·max|R_jj|` the system is re-solved with a `RIDGE_JITTER`
/// ridge term and a warning is logged.
pub fn least_squares<T: Scalar>(a: &[T], n: usize, d: usize, b: &[T], k: usize) -> Result<LeastSquares<T>> {
    if a.len() != n * d || b.len() != n * k {
        return Err(Error::Dimension { op: "least_squares", left: vec![n, d], right: vec![b.len() / n.max(1), k] });
    }
    if n <= d {
        return Err(Error::contract(format!("least squares needs more rows than columns (n = {n}, d = {d})")));
    }
    let (coef, diag) = solve_once(a, n, d, b, k);
    let rmax = diag.iter().map(|r| r.abs()).fold(T::zero(), T::max);
    let tol = T::of(n.max(d) as f64) * T::epsilon() * rmax;
    if rmax > T::zero() && diag.iter().all(|r| r.abs() > tol) {
        return Ok(LeastSquares { coef, d, k, ridged: false });
    }

    warn!("design matrix is rank deficient; solving with ridge jitter {RIDGE_JITTER}");
    let lam = T::of(RIDGE_JITTER).sqrt();
    let mut aa = a.to_vec();
    let mut bb = b.to_vec();
    for i in 0..d {
        for j in 0..d {
            aa.push(if i == j { lam } else { T::zero() });
        }
        bb.extend(std::iter::repeat_n(T::zero(), k));
    }
    let (coef, _) = solve_once(&aa, n + d, d, &bb, k);
    Ok(LeastSquares { coef, d, k, ridged: true })
}
