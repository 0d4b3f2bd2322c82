//! Scalar abstraction shared by every numeric module.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the solvers and operator engine are generic over.
///
/// Implemented for `f32` and `f64`. Linear algebra goes through nalgebra's
/// [`RealField`]; conversions to and from literals go through num-traits.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values, which never happens for the provided impls.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize fits in a float")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f64::from_usize_lossy(7), 7.0);
        assert_eq!(0.5f32.to_f64_lossy(), 0.5);
    }
}
