//! Scalar abstraction over the tensor element type.
//!
//! The production pipeline runs in `f32` (that is what crosses the wire and
//! what trained weights are stored in); numerical verification re-runs the
//! same models in `f64` shadow precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type accepted by the engine: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Narrowing conversion from the 64-bit accumulator domain.
    fn of_f64(v: f64) -> Self;
    /// Widening conversion into the 64-bit accumulator domain.
    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty)*) => {$(
        impl Scalar for $t {
            #[inline]
            fn of_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_scalar!(f32 f64);
