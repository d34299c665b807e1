//! Numeric backing for evaluation metrics.
//!
//! Precision, recall and F1 are ratios of counts, so the metric code only
//! needs field arithmetic plus a way to lift a count into the scalar type.
//! `f64` is what reports use; `f32` is there for memory-bound sweeps and
//! `Ratio<i64>` gives exact values for checking the floating-point paths.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

pub trait MetricScalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: u64) -> Self;

    fn to_f64(self) -> f64;

    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn half() -> Self {
        Self::one() / Self::two()
    }
}

impl MetricScalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl MetricScalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl MetricScalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        let n = i64::try_from(n).expect("count exceeds i64 range");
        Ratio::from_integer(n)
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_ratio_lifts_counts() {
        let third = Ratio::<i64>::from_count(1) / Ratio::<i64>::from_count(3);
        assert_eq!(third, Ratio::new(1, 3));
        assert!((MetricScalar::to_f64(third) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn half_is_half() {
        assert_eq!(f64::half(), 0.5);
        assert_eq!(f32::half(), 0.5);
        assert_eq!(Ratio::<i64>::half(), Ratio::new(1, 2));
    }
}
