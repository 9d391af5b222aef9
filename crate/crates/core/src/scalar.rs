//! Scalar types the tensor algebra is generic over.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    fn from_rational(r: &Rational) -> Self;
    /// Multiplicative inverse. Panics (rationals) or returns inf (floats) on zero.
    fn recip(&self) -> Self;
    fn is_exact_zero(&self) -> bool;
    /// Size used for tolerances; for jets the largest coefficient.
    fn magnitude(&self) -> f64;
    /// Nearest double (for jets, the value at the base point).
    fn to_f64(&self) -> f64;

    fn scale(&self, num: i64, den: i64) -> Self {
        self.clone() * Self::from_ratio(num, den)
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn from_rational(r: &Rational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn is_exact_zero(&self) -> bool {
        *self == 0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn scale(&self, num: i64, den: i64) -> Self {
        *self * num as f64 / den as f64
    }
}

impl Scalar for Rational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn recip(&self) -> Self {
        BigRational::recip(self)
    }
    fn is_exact_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn magnitude(&self) -> f64 {
        ToPrimitive::to_f64(&self.abs()).unwrap_or(f64::INFINITY)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::from_ratio(num, den)
}

pub fn rat_int(v: &BigInt) -> Rational {
    BigRational::from_integer(v.clone())
}
