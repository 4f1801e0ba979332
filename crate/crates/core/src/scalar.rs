//! Floating-point abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type for all kernel, regression, and planning arithmetic: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum<Self> + Display + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable in the scalar type")
}
