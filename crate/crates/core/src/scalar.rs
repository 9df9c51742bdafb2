//! Scalar types usable for utilization bookkeeping.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};

/// A number that can represent `num / den` utilizations and be compared.
///
/// Implemented for `f32`, `f64` and [`BigRational`]; the rational version is
/// exact, the float versions round.
pub trait UtilizationScalar: Num + Clone + PartialOrd + Debug {
    fn from_ratio(num: u128, den: u128) -> Self;

    fn from_count(count: usize) -> Self {
        Self::from_ratio(count as u128, 1)
    }

    fn approx_f64(&self) -> f64;
}

impl UtilizationScalar for f64 {
    fn from_ratio(num: u128, den: u128) -> Self {
        num as f64 / den as f64
    }

    fn approx_f64(&self) -> f64 {
        *self
    }
}

impl UtilizationScalar for f32 {
    fn from_ratio(num: u128, den: u128) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn approx_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl UtilizationScalar for BigRational {
    fn from_ratio(num: u128, den: u128) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn approx_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
