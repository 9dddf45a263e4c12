//! Floating-point abstraction shared by every solver.
//!
//! All numerical code is written against [`Scalar`], which `f32` and `f64`
//! implement. Tolerances are stated in `f64` and widened to a few ulps of the
//! concrete type through [`Scalar::tol`], so the same code paths stay
//! meaningful in single precision.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    /// Tolerance `x`, but never below 256 machine epsilons of `Self`.
    fn tol(x: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(256.0);
        Self::lit(x).max(floor)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sequential left-to-right sum; the fixed order keeps traces bit-reproducible.
pub(crate) fn ordered_sum<T: Scalar>(it: impl IntoIterator<Item = T>) -> T {
    let mut acc = T::zero();
    for x in it {
        acc += x;
    }
    acc
}

pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    ordered_sum(x.iter().zip(y).map(|(&a, &b)| a * b))
}

pub(crate) fn l1_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    ordered_sum(x.iter().zip(y).map(|(&a, &b)| (a - b).abs()))
}

pub(crate) fn l2_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    ordered_sum(x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b))).sqrt()
}
