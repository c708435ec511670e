//! Exact rational scalar used for every time, rate and cost.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Arbitrary-precision rational in canonical form (positive denominator,
/// numerator and denominator coprime).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ratio(BigRational);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RatioParseError {
    #[error("empty rational")]
    Empty,
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("malformed rational `{0}`")]
    Malformed(String),
}

impl Ratio {
    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Ratio(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_int(n: i64) -> Self {
        Ratio(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_bigs(numer: BigInt, denom: BigInt) -> Self {
        assert!(!denom.is_zero(), "zero denominator");
        Ratio(BigRational::new(numer, denom))
    }

    pub fn zero() -> Self {
        Ratio(BigRational::zero())
    }

    pub fn one() -> Self {
        Ratio(BigRational::one())
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
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

    pub fn abs(&self) -> Self {
        Ratio(self.0.abs())
    }

    pub fn recip(&self) -> Self {
        Ratio(self.0.recip())
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Arithmetic mean of `self` and `other`.
    pub fn midpoint(&self, other: &Ratio) -> Ratio {
        (self + other) / Ratio::from_int(2)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rendering with `digits` significant digits, for humans only.
    pub fn to_decimal(&self, digits: usize) -> String {
        let v = self.to_f64();
        if v == 0.0 {
            return "0".to_string();
        }
        let magnitude = v.abs().log10().floor() as i32;
        let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
        format!("{v:.decimals$}")
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Ratio {
    type Err = RatioParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(RatioParseError::Empty);
        }
        let malformed = || RatioParseError::Malformed(s.to_string());
        let parse_int = |part: &str, allow_sign: bool| -> Result<BigInt, RatioParseError> {
            let digits = if allow_sign {
                part.strip_prefix('-').unwrap_or(part)
            } else {
                part
            };
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(malformed());
            }
            part.parse::<BigInt>().map_err(|_| malformed())
        };
        match s.split_once('/') {
            None => Ok(Ratio(BigRational::from_integer(parse_int(s, true)?))),
            Some((n, d)) => {
                let numer = parse_int(n, true)?;
                let denom = parse_int(d, false)?;
                if denom.is_zero() {
                    return Err(RatioParseError::ZeroDenominator(s.to_string()));
                }
                Ok(Ratio(BigRational::new(numer, denom)))
            }
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<i64> for Ratio {
    fn from(n: i64) -> Self {
        Ratio::from_int(n)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait<Ratio> for Ratio {
            type Output = Ratio;
            fn $method(self, rhs: Ratio) -> Ratio {
                Ratio((self.0).$method(rhs.0))
            }
        }
        impl<'a> $trait<&'a Ratio> for Ratio {
            type Output = Ratio;
            fn $method(self, rhs: &'a Ratio) -> Ratio {
                Ratio((self.0).$method(&rhs.0))
            }
        }
        impl<'a> $trait<Ratio> for &'a Ratio {
            type Output = Ratio;
            fn $method(self, rhs: Ratio) -> Ratio {
                Ratio((&self.0).$method(rhs.0))
            }
        }
        impl<'a, 'b> $trait<&'b Ratio> for &'a Ratio {
            type Output = Ratio;
            fn $method(self, rhs: &'b Ratio) -> Ratio {
                Ratio((&self.0).$method(&rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for Ratio {
    type Output = Ratio;
    fn neg(self) -> Ratio {
        Ratio(-self.0)
    }
}

impl Neg for &Ratio {
    type Output = Ratio;
    fn neg(self) -> Ratio {
        Ratio(-&self.0)
    }
}

impl AddAssign<&Ratio> for Ratio {
    fn add_assign(&mut self, rhs: &Ratio) {
        self.0 += &rhs.0;
    }
}

impl AddAssign<Ratio> for Ratio {
    fn add_assign(&mut self, rhs: Ratio) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Ratio> for Ratio {
    fn sub_assign(&mut self, rhs: &Ratio) {
        self.0 -= &rhs.0;
    }
}

impl Sum for Ratio {
    fn sum<I: Iterator<Item = Ratio>>(iter: I) -> Ratio {
        iter.fold(Ratio::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Ratio> for Ratio {
    fn sum<I: Iterator<Item = &'a Ratio>>(iter: I) -> Ratio {
        iter.fold(Ratio::zero(), |acc, x| acc + x)
    }
}

/// `p/q` shorthand used throughout the tests.
pub fn r(numer: i64, denom: i64) -> Ratio {
    Ratio::new(numer, denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_fraction_tokens() {
        assert_eq!("1/3".parse::<Ratio>().unwrap(), r(1, 3));
        assert_eq!("-4/6".parse::<Ratio>().unwrap(), r(-2, 3));
        assert_eq!("7".parse::<Ratio>().unwrap(), Ratio::from_int(7));
        assert_eq!(r(2, 4).to_string(), "1/2");
        assert_eq!(r(-3, 1).to_string(), "-3");
    }

    #[test]
    fn rejects_bad_tokens() {
        assert!(matches!(
            "1/0".parse::<Ratio>(),
            Err(RatioParseError::ZeroDenominator(_))
        ));
        assert!("1/-2".parse::<Ratio>().is_err());
        assert!("abc".parse::<Ratio>().is_err());
        assert!("1.5".parse::<Ratio>().is_err());
        assert!("".parse::<Ratio>().is_err());
        assert!("/3".parse::<Ratio>().is_err());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(r(1, 3).to_decimal(6), "0.333333");
        assert_eq!(r(29, 10).to_decimal(6), "2.90000");
        assert_eq!(Ratio::zero().to_decimal(6), "0");
    }

    fn small() -> impl Strategy<Value = Ratio> {
        (-50i64..50, 1i64..20).prop_map(|(n, d)| r(n, d))
    }

    proptest! {
        #[test]
        fn add_sub_and_mul_div_round_trip(p in small(), q in small()) {
            prop_assert_eq!(&(&p + &q) - &q, p.clone());
            if !q.is_zero() {
                prop_assert_eq!(&(&p * &q) / &q, p.clone());
            }
        }

        #[test]
        fn display_parse_round_trip(p in small()) {
            prop_assert_eq!(p.to_string().parse::<Ratio>().unwrap(), p);
        }
    }
}
