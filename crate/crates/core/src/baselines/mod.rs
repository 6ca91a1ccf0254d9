//! Comparison models: direct multi-horizon linear regression and recursive
//! AR(p), both fitted by Householder QR.

mod ar;
mod linear;
pub mod qr;

pub use ar::{ar_forecast, fit_ar, ARModel};
pub use linear::{fit_linear_regression, LinearFeatures, LinearModel};
