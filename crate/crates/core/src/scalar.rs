//! Scalar abstraction shared by the tensor engine, layers, models and baselines.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors and fitted coefficients.
///
/// Implemented for `f32` and `f64`. Everything the CLI ships runs in `f64`;
/// gradient checks at the advertised tolerances need double precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for data and literal constants.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
