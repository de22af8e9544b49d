use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use crate::economics::{int, micro_ratio, Rational};
use crate::units::MICRO;

/// Exact running moments of a sample of micro-unit values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    n: u64,
    sum: BigInt,
    sum_sq: BigInt,
    min: Option<i64>,
    max: Option<i64>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, micros: i64) {
        self.push_n(micros, 1);
    }

    /// Adds `count` copies of the same value.
    pub fn push_n(&mut self, micros: i64, count: u64) {
        if count == 0 {
            return;
        }
        let v = BigInt::from(micros);
        let c = BigInt::from(count);
        self.sum += &v * &c;
        self.sum_sq += &v * &v * c;
        self.n += count;
        self.min = Some(self.min.map_or(micros, |m| m.min(micros)));
        self.max = Some(self.max.map_or(micros, |m| m.max(micros)));
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn min(&self) -> Option<Rational> {
        self.min.map(|m| micro_ratio(m as i128))
    }

    pub fn max(&self) -> Option<Rational> {
        self.max.map(|m| micro_ratio(m as i128))
    }

    pub fn mean(&self) -> Rational {
        if self.n == 0 {
            return Rational::zero();
        }
        Rational::new(self.sum.clone(), BigInt::from(self.n) * BigInt::from(MICRO))
    }

    /// Squared standard error of the mean from the unbiased sample variance.
    /// Zero for fewer than two observations.
    pub fn stderr_sq(&self) -> Rational {
        if self.n < 2 {
            return Rational::zero();
        }
        let n = BigInt::from(self.n);
        // n·Σx² − (Σx)² over n²(n−1), in micro² units.
        let numer = &n * &self.sum_sq - &self.sum * &self.sum;
        let denom = &n * &n * (&n - 1) * BigInt::from(MICRO) * BigInt::from(MICRO);
        Rational::new(numer, denom)
    }

    /// Standard error rounded down to a micro-unit.
    pub fn stderr(&self) -> Rational {
        let scaled = (self.stderr_sq() * int(MICRO as i64) * int(MICRO as i64))
            .floor()
            .to_integer();
        Rational::new(scaled.sqrt(), BigInt::from(MICRO))
    }

    /// `|mean − target| ≤ k·stderr`, decided exactly on squares.
    pub fn within(&self, target: &Rational, k: u32) -> bool {
        let d = self.mean() - target;
        let k = int(k as i64);
        &d * &d <= &k * &k * self.stderr_sq()
    }

    /// Sign of the mean: -1, 0 or 1.
    pub fn mean_sign(&self) -> i32 {
        let m = self.mean();
        if m.is_positive() {
            1
        } else if m.is_negative() {
            -1
        } else {
            0
        }
    }
}
