//! Exact rational fractions for rates and thresholds.
//!
//! Every pass/fail comparison in the engine is made between two
//! [`Fraction`]s, never between floats, so that a rate of exactly 9/10
//! meets a threshold of 0.9 on every platform.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FractionError {
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("cannot parse {0:?} as a fraction")]
    Unparseable(String),
}

/// A non-negative exact rational number, always stored in lowest terms.
///
/// Serialized as the string `"n/d"`; deserialized from that form, from a
/// decimal string (`"0.9"`), or from a JSON number (which is read through
/// its shortest decimal representation, so `0.9` becomes exactly `9/10`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction(Ratio<u64>);

impl Fraction {
    pub const ZERO: Fraction = Fraction(Ratio::new_raw(0, 1));
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self, FractionError> {
        if denom == 0 {
            return Err(FractionError::ZeroDenominator);
        }
        Ok(Fraction(Ratio::new(numer, denom)))
    }

    /// Panics on a zero denominator; for constants and counts known non-empty.
    pub fn of(numer: u64, denom: u64) -> Self {
        Self::new(numer, denom).expect("fraction with zero denominator")
    }

    /// Const constructor; the caller guarantees lowest terms and a
    /// non-zero denominator.
    pub const fn from_reduced(numer: u64, denom: u64) -> Self {
        Fraction(Ratio::new_raw(numer, denom))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_within_unit(&self) -> bool {
        self.numer() <= self.denom()
    }

    /// `|self - other|` as an exact fraction.
    pub fn abs_diff(&self, other: &Fraction) -> Fraction {
        if self >= other {
            Fraction(self.0 - other.0)
        } else {
            Fraction(other.0 - self.0)
        }
    }

    pub fn checked_sub(&self, other: &Fraction) -> Option<Fraction> {
        (self >= other).then(|| Fraction(self.0 - other.0))
    }

    pub fn add(&self, other: &Fraction) -> Fraction {
        Fraction(self.0 + other.0)
    }

    /// Mean of a non-empty list of fractions.
    pub fn mean(values: &[Fraction]) -> Option<Fraction> {
        if values.is_empty() {
            return None;
        }
        let sum = values.iter().fold(Ratio::from_integer(0u64), |acc, v| acc + v.0);
        Some(Fraction(sum / Ratio::from_integer(values.len() as u64)))
    }

    fn parse_decimal(s: &str) -> Result<Self, FractionError> {
        let bad = || FractionError::Unparseable(s.to_string());
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 18
        {
            return Err(bad());
        }
        let denom = 10u64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
        let int_val: u64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
        let frac_val: u64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
        let numer = int_val
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Fraction::new(numer, denom)
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        // Cross-multiply in u128 so large counts never overflow.
        let lhs = self.numer() as u128 * other.denom() as u128;
        let rhs = other.numer() as u128 * self.denom() as u128;
        lhs.cmp(&rhs)
    }
}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl FromStr for Fraction {
    type Err = FractionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n: u64 = n.trim().parse().map_err(|_| FractionError::Unparseable(s.to_string()))?;
                let d: u64 = d.trim().parse().map_err(|_| FractionError::Unparseable(s.to_string()))?;
                Fraction::new(n, d)
            }
            None => Fraction::parse_decimal(s),
        }
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FractionVisitor;

        impl Visitor<'_> for FractionVisitor {
            type Value = Fraction;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative fraction as a number, \"n/d\" or a decimal string")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fraction, E> {
                Ok(Fraction::of(v, 1))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fraction, E> {
                u64::try_from(v)
                    .map(|v| Fraction::of(v, 1))
                    .map_err(|_| E::custom("negative fraction"))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fraction, E> {
                if !v.is_finite() || v < 0.0 {
                    return Err(E::custom(format!("invalid fraction {v}")));
                }
                // Display of f64 is the shortest round-tripping decimal.
                Fraction::parse_decimal(&format!("{v}")).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Fraction, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(FractionVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_exactly() {
        assert_eq!("0.9".parse::<Fraction>().unwrap(), Fraction::of(9, 10));
        assert_eq!("0.30".parse::<Fraction>().unwrap(), Fraction::of(3, 10));
        assert_eq!("1".parse::<Fraction>().unwrap(), Fraction::ONE);
        assert_eq!("11/12".parse::<Fraction>().unwrap(), Fraction::of(11, 12));
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("-0.5".parse::<Fraction>().is_err());
    }

    #[test]
    fn json_number_is_read_through_its_decimal_form() {
        let f: Fraction = serde_json::from_str("0.9").unwrap();
        assert_eq!(f, Fraction::of(9, 10));
        let f: Fraction = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(f, Fraction::of(1, 3));
        assert_eq!(serde_json::to_string(&Fraction::of(2, 4)).unwrap(), "\"1/2\"");
    }

    #[test]
    fn ordering_is_exact() {
        assert!(Fraction::of(11, 12) >= Fraction::of(9, 10));
        assert!(Fraction::of(9, 10) >= Fraction::of(9, 10));
        assert!(Fraction::of(1, 3) > Fraction::of(3, 10));
        assert!(Fraction::of(1, 3) < Fraction::of(1, 2));
    }
}
