use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the reward, difficulty and GRPO math.
///
/// Implemented for `f32` and `f64`. The simulator and CLI run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `x * ln(x)` with the `0 * ln 0 = 0` convention.
#[inline]
pub fn xlogx<T: Real>(x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else {
        x * x.ln()
    }
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Population mean and standard deviation.
pub fn mean_std<T: Real>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::count(xs.len());
    let mean = xs.iter().fold(T::zero(), |a, &x| a + x) / n;
    let var = xs.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_symmetric_and_bounded() {
        for &x in &[-800.0f64, -3.0, 0.0, 2.5, 800.0] {
            let s = logistic(x);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + logistic(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(logistic(0.0f32), 0.5);
    }

    #[test]
    fn xlogx_zero_convention() {
        assert_eq!(xlogx(0.0f64), 0.0);
        assert!((xlogx(0.5f64) - 0.5 * 0.5f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0f64, 1.0, 0.0, 0.0]);
        assert_eq!(m, 0.5);
        assert_eq!(s, 0.5);
    }
}
