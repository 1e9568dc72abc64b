//! Exact integers and rationals used for every count and proportion.
//!
//! Hot loops run on `i128`/`u128` with checked arithmetic and fall back to
//! [`ExactInt`] (a `BigInt`) when a checked operation reports overflow.

use std::fmt;
use std::iter::{Product, Sum};
use std::ops::{Add, AddAssign, Mul, MulAssign, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Integer of unbounded magnitude. Arithmetic never wraps.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ExactInt(BigInt);

impl ExactInt {
    pub fn zero() -> Self {
        ExactInt(BigInt::zero())
    }

    pub fn one() -> Self {
        ExactInt(BigInt::one())
    }

    pub fn as_bigint(&self) -> &BigInt {
        &self.0
    }

    pub fn into_bigint(self) -> BigInt {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }

    pub fn to_u128(&self) -> Option<u128> {
        self.0.to_u128()
    }

    pub fn to_i128(&self) -> Option<i128> {
        self.0.to_i128()
    }

    /// Nearest `f64`; saturates to infinity for huge magnitudes.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(if self.0.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        })
    }

    /// Natural logarithm of a positive value, accurate for magnitudes far
    /// beyond the `f64` range.
    pub fn ln(&self) -> f64 {
        if !self.0.is_positive() {
            return f64::NEG_INFINITY;
        }
        let bits = self.0.bits();
        if bits < 1000 {
            return self.to_f64().ln();
        }
        let shift = bits - 64;
        let top = (&self.0 >> shift).to_f64().unwrap_or(f64::MAX);
        top.ln() + shift as f64 * std::f64::consts::LN_2
    }

    pub fn pow(&self, exp: u32) -> Self {
        ExactInt(num_traits::pow(self.0.clone(), exp as usize))
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::from_integer(self.0.clone())
    }
}

impl fmt::Display for ExactInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for ExactInt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BigInt::from_str(s.trim())
            .map(ExactInt)
            .map_err(|e| Error::parse(format!("invalid integer {s:?}: {e}")))
    }
}

macro_rules! from_prim {
    ($($t:ty),*) => {$(
        impl From<$t> for ExactInt {
            fn from(v: $t) -> Self {
                ExactInt(BigInt::from(v))
            }
        }
    )*};
}
from_prim!(u8, u16, u32, u64, u128, usize, i8, i16, i32, i64, i128, isize);

impl From<BigInt> for ExactInt {
    fn from(v: BigInt) -> Self {
        ExactInt(v)
    }
}

impl From<BigUint> for ExactInt {
    fn from(v: BigUint) -> Self {
        ExactInt(BigInt::from_biguint(Sign::Plus, v))
    }
}

impl From<ExactInt> for BigInt {
    fn from(v: ExactInt) -> Self {
        v.0
    }
}

impl Add for ExactInt {
    type Output = ExactInt;
    fn add(self, rhs: ExactInt) -> ExactInt {
        ExactInt(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a ExactInt> for &'a ExactInt {
    type Output = ExactInt;
    fn add(self, rhs: &ExactInt) -> ExactInt {
        ExactInt(&self.0 + &rhs.0)
    }
}

impl AddAssign for ExactInt {
    fn add_assign(&mut self, rhs: ExactInt) {
        self.0 += rhs.0;
    }
}

impl<'a> AddAssign<&'a ExactInt> for ExactInt {
    fn add_assign(&mut self, rhs: &ExactInt) {
        self.0 += &rhs.0;
    }
}

impl Sub for ExactInt {
    type Output = ExactInt;
    fn sub(self, rhs: ExactInt) -> ExactInt {
        ExactInt(self.0 - rhs.0)
    }
}

impl<'a> Sub<&'a ExactInt> for &'a ExactInt {
    type Output = ExactInt;
    fn sub(self, rhs: &ExactInt) -> ExactInt {
        ExactInt(&self.0 - &rhs.0)
    }
}

impl Mul for ExactInt {
    type Output = ExactInt;
    fn mul(self, rhs: ExactInt) -> ExactInt {
        ExactInt(self.0 * rhs.0)
    }
}

impl<'a> Mul<&'a ExactInt> for &'a ExactInt {
    type Output = ExactInt;
    fn mul(self, rhs: &ExactInt) -> ExactInt {
        ExactInt(&self.0 * &rhs.0)
    }
}

impl MulAssign for ExactInt {
    fn mul_assign(&mut self, rhs: ExactInt) {
        self.0 *= rhs.0;
    }
}

impl Sum for ExactInt {
    fn sum<I: Iterator<Item = ExactInt>>(iter: I) -> Self {
        iter.fold(ExactInt::zero(), |a, b| a + b)
    }
}

impl Product for ExactInt {
    fn product<I: Iterator<Item = ExactInt>>(iter: I) -> Self {
        iter.fold(ExactInt::one(), |a, b| a * b)
    }
}

// Serialized as a decimal string so no consumer ever rounds it.
impl Serialize for ExactInt {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactInt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Str(String),
            Int(i64),
            UInt(u64),
        }
        match Repr::deserialize(d)? {
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Int(v) => Ok(ExactInt::from(v)),
            Repr::UInt(v) => Ok(ExactInt::from(v)),
        }
    }
}

/// Exact product of `u64` factors; widens past `u128` automatically.
pub fn product_u64<I: IntoIterator<Item = u64>>(factors: I) -> ExactInt {
    let mut small: u128 = 1;
    let mut big: Option<BigInt> = None;
    for f in factors {
        match &mut big {
            Some(b) => *b *= f,
            None => match small.checked_mul(f as u128) {
                Some(v) => small = v,
                None => big = Some(BigInt::from(small) * f),
            },
        }
    }
    match big {
        Some(b) => ExactInt(b),
        None => ExactInt::from(small),
    }
}

/// `numer / denom` as an exact rational.
pub fn ratio(numer: &ExactInt, denom: &ExactInt) -> BigRational {
    BigRational::new(numer.0.clone(), denom.0.clone())
}

/// Rational formatted as `p/q` (or `p` when integral).
pub fn fmt_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `p/q`, an integer, or a finite decimal such as `0.01` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::parse(format!("invalid rational {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
        let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    let (base, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = base.split_once('.').unwrap_or((base, ""));
    let digits = format!("{int_part}{frac_part}");
    if digits.is_empty() || digits == "-" || digits == "+" {
        return Err(bad());
    }
    let numer = BigInt::from_str(&digits).map_err(|_| bad())?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    Ok(if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    })
}

/// Nearest `f64` to an exact rational, robust to huge numerators and denominators.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    let ln = ExactInt(r.numer().abs()).ln() - ExactInt(r.denom().clone()).ln();
    let v = ln.exp();
    if r.is_negative() {
        -v
    } else {
        v
    }
}

/// Natural log of a positive rational.
pub fn rational_ln(r: &BigRational) -> f64 {
    ExactInt(r.numer().clone()).ln() - ExactInt(r.denom().clone()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_widens_past_u128() {
        let p = product_u64([u64::MAX, u64::MAX, 3]);
        let expected = BigInt::from(u64::MAX) * BigInt::from(u64::MAX) * 3;
        assert_eq!(p.as_bigint(), &expected);
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(parse_rational("1/100").unwrap(), BigRational::new(1.into(), 100.into()));
        assert_eq!(parse_rational("0.01").unwrap(), BigRational::new(1.into(), 100.into()));
        assert_eq!(parse_rational("1e-2").unwrap(), BigRational::new(1.into(), 100.into()));
        assert_eq!(parse_rational("3").unwrap(), BigRational::from_integer(3.into()));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn ln_of_huge_values() {
        let v = ExactInt::from(10u32).pow(400);
        assert!((v.ln() - 400.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn serde_as_string() {
        let v = ExactInt::from(u128::MAX);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, format!("\"{}\"", u128::MAX));
        let back: ExactInt = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let small: ExactInt = serde_json::from_str("42").unwrap();
        assert_eq!(small, ExactInt::from(42));
    }
}
