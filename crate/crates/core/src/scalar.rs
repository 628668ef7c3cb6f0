//! Scalar abstractions.
//!
//! Continuous numerics (kernels, Cholesky, optimizers) are written against
//! [`Scalar`], which is implemented for `f32` and `f64`. Feature frequencies
//! and total-variation distances only need field arithmetic, so they are
//! written against the weaker [`Mass`] trait, which additionally admits exact
//! rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, Num, NumAssign, Signed, ToPrimitive, Zero};

/// Floating point type usable by the GP and kernel-kernel numerics.
pub trait Scalar:
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

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Probability mass type: frequencies and total-variation distances.
pub trait Mass: Clone + PartialOrd + Num + Signed + Debug + Send + Sync + 'static {
    /// The frequency `count / total`.
    fn ratio(count: usize, total: usize) -> Self;

    /// Largest admissible deviation of a distribution's total mass from one.
    fn normalization_tolerance() -> Self;

    fn half() -> Self {
        Self::ratio(1, 2)
    }
}

impl Mass for f64 {
    fn ratio(count: usize, total: usize) -> Self {
        count as f64 / total as f64
    }

    fn normalization_tolerance() -> Self {
        1e-9
    }
}

impl Mass for f32 {
    fn ratio(count: usize, total: usize) -> Self {
        count as f32 / total as f32
    }

    fn normalization_tolerance() -> Self {
        1e-5
    }
}

impl Mass for Ratio<i64> {
    fn ratio(count: usize, total: usize) -> Self {
        Ratio::new(count as i64, total as i64)
    }

    fn normalization_tolerance() -> Self {
        Ratio::zero()
    }
}

impl Mass for Ratio<i128> {
    fn ratio(count: usize, total: usize) -> Self {
        Ratio::new(count as i128, total as i128)
    }

    fn normalization_tolerance() -> Self {
        Ratio::zero()
    }
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > lit(30.0) {
        x
    } else if x < lit(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    if y > lit(30.0) {
        y
    } else {
        // log(exp(y) - 1) = y + log(1 - exp(-y))
        y + (-(-y).exp()).ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(x))`, the log-Jacobian of [`softplus`].
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    -softplus(-x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-8, 1e-3, 0.5, 1.0, 7.0, 45.0] {
            let back: f64 = softplus(softplus_inv(y));
            assert!((back - y).abs() <= 1e-12 * y.max(1.0), "{y} -> {back}");
        }
    }

    #[test]
    fn log_sigmoid_matches_direct() {
        for &x in &[-20.0f64, -1.0, 0.0, 2.5, 40.0] {
            let direct = sigmoid(x).ln();
            assert!((log_sigmoid(x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn rational_ratio_is_exact() {
        let r = <Ratio<i64> as Mass>::ratio(2, 6);
        assert_eq!(r, Ratio::new(1, 3));
    }
}
