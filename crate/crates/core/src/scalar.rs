//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point type the solvers are generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + ndarray::ScalarOperand
    + 'static
{
    /// Machine epsilon scaled to something usable as a round-off floor.
    const ROUNDOFF: Self;

    /// Converts an `f64` literal. Never fails for finite input.
    fn lit(x: f64) -> Self;

    fn of_usize(n: usize) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ROUNDOFF: Self = <$t>::EPSILON * 64.0;

            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline(always)]
            fn of_usize(n: usize) -> Self {
                n as $t
            }

            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Composite trapezoid weights for `n` uniform samples of spacing `d`.
pub fn trapezoid_weights<T: Real>(n: usize, d: T) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![T::one()],
        _ => {
            let mut w = vec![d; n];
            w[0] = d * T::lit(0.5);
            w[n - 1] = d * T::lit(0.5);
            w
        }
    }
}

/// Polynomial smoothstep `u^3 (10 - 15u + 6u^2)` clamped to `[0, 1]`, with its
/// first two derivatives.
#[inline]
pub fn smoothstep<T: Real>(u: T) -> (T, T, T) {
    if u <= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    if u >= T::one() {
        return (T::one(), T::zero(), T::zero());
    }
    let one = T::one();
    let s = u * u * u * (T::lit(10.0) - T::lit(15.0) * u + T::lit(6.0) * u * u);
    let ds = T::lit(30.0) * u * u * (one - u) * (one - u);
    let d2s = T::lit(60.0) * u * (one - u) * (one - T::lit(2.0) * u);
    (s, ds, d2s)
}

/// Least-squares line `y = a x + b`, returned as `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}
