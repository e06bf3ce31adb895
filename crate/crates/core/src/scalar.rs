//! Scalar abstraction shared by all numerical modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the samplers are generic over: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Machine epsilon for the type.
    fn eps() -> Self;
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// `log(2π)`.
pub fn ln_2pi<R: Real>() -> R {
    R::of(std::f64::consts::TAU.ln())
}

/// Numerically stable `log Σ exp(a_i)`; returns `-∞` for empty or all `-∞` input.
pub fn log_sum_exp<R: Real>(values: &[R]) -> R {
    let max = values
        .iter()
        .copied()
        .fold(R::from_f64(f64::NEG_INFINITY).unwrap(), |a, b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let sum = values
        .iter()
        .fold(R::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

pub(crate) fn neg_infinity<R: Real>() -> R {
    R::of(f64::NEG_INFINITY)
}
