//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does floating-point work is generic over [`Real`], which is
//! satisfied by `f32` and `f64`. The crate root exports `f64` aliases for the
//! common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn cst<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Converts a `T` into `f64` (lossless for `f32`/`f64`).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// `log(sum(exp(xs)))` with the usual max shift. Returns `-inf` for an empty
/// or all `-inf` input.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    if m == T::infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Stable `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_diff<T: Real>(a: T, b: T) -> T {
    let scale = a.abs().max(b.abs());
    if scale == T::zero() {
        T::zero()
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1f64, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert!((log_add_exp(1.0f64, 2.0) - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_underflow() {
        let xs = [-1000.0f64, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let xs32 = [-200.0f32, -200.0];
        assert!((log_sum_exp(&xs32) - (-200.0 + 2f32.ln())).abs() < 1e-4);
    }
}
