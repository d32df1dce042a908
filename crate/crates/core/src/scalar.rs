use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar the numeric core is written against: `f32` or `f64`.
///
/// Every tolerance quoted in the docs and tests assumes `f64`; `f32` works
/// for the same code paths at correspondingly looser accuracy.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Sum + Default + Display + Debug
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn c<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("f64 literal representable in scalar")
}

/// Converts a count or index into the working scalar.
#[inline]
pub fn cu<S: Scalar>(v: usize) -> S {
    S::from_usize(v).expect("usize representable in scalar")
}

/// Converts a signed index into the working scalar.
#[inline]
pub fn ci<S: Scalar>(v: isize) -> S {
    S::from_isize(v).expect("isize representable in scalar")
}

#[inline]
pub fn to_f64<S: Scalar>(v: S) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
