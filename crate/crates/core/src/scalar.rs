use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, NumAssign};

/// Floating point scalar used by all numerical routines: `f32` or `f64`.
pub trait Scalar:
    Float + BoxScalar + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Bound type for box arithmetic. Floats qualify, and so do exact rationals.
pub trait BoxScalar: Clone + PartialOrd + Num + Debug {
    /// False for NaN and infinities.
    fn is_finite_bound(&self) -> bool;
}

impl BoxScalar for f32 {
    fn is_finite_bound(&self) -> bool {
        self.is_finite()
    }
}

impl BoxScalar for f64 {
    fn is_finite_bound(&self) -> bool {
        self.is_finite()
    }
}

impl BoxScalar for num_rational::BigRational {
    fn is_finite_bound(&self) -> bool {
        true
    }
}

impl BoxScalar for num_rational::Rational64 {
    fn is_finite_bound(&self) -> bool {
        true
    }
}

/// `k * step`, computed as `k / (1/step)` when `1/step` is an integer so that
/// decimal steps such as `0.1` give correctly rounded multiples.
pub(crate) fn lattice_value<T: Scalar>(k: i64, step: T) -> T {
    let kf = T::from_i64(k).expect("lattice index fits scalar");
    let inv = T::one() / step;
    let inv_round = inv.round();
    if inv_round >= T::one() && (inv - inv_round).abs() <= T::lit(1e-9) * inv_round {
        kf / inv_round
    } else {
        kf * step
    }
}
