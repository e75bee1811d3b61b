//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rustfft::FftNum;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the models are generic over. Implemented for `f32`
/// and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + FftNum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `(e^{x t} - 1) / x`, continuous through `x = 0` where it equals `t`.
#[inline]
pub(crate) fn expm1_ratio<T: Real>(x: T, t: T) -> T {
    if x == T::zero() {
        t
    } else {
        (x * t).exp_m1() / x
    }
}

/// Maximum of the absolute values, floored at one. Used to scale the
/// degenerate-branch switching thresholds.
#[inline]
pub(crate) fn switch_scale<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::one(), |acc, v| acc.max(v.abs()))
}

/// Relative threshold below which a branch denominator is treated as zero.
pub(crate) fn branch_threshold<T: Real>() -> T {
    T::lit(1e-9)
}
