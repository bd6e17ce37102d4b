//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Training runs in `f32`; gradient checks run in `f64`. Everything that
//! touches model math is generic over [`Scalar`] so the same code path
//! serves both.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and initializers.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }

    fn of_f32(v: f32) -> Self {
        Self::of(v as f64)
    }

    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_f64() {
        assert_eq!(f32::of(0.25).as_f64(), 0.25);
        assert_eq!(f64::of_f32(1.5f32), 1.5);
        assert_eq!(2.5f64.as_f32(), 2.5f32);
    }
}
