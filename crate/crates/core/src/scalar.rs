//! Floating-point scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, eigensolves, kernels) is generic over
//! [`Scalar`] so the same code runs in `f32` or `f64`. The crate root
//! exports `f64` aliases, which is what the model pipeline uses.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Convert from `f64`, panicking only on values a float cannot hold
    /// (never happens for finite constants).
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
