//! Fixed-point amounts, fractions and identifiers.
//!
//! Every quantity that crosses a ledger path is an integer count of
//! micro-units. Token counts and monetary values are separate types so that
//! a conversion between them always goes through an explicit unit value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Micro-units per display unit (six fractional digits).
pub const MICRO: u64 = 1_000_000;

/// Basis points in one whole.
pub const BASIS: u32 = 10_000;

/// Discrete time. One tick is one hour.
pub type Tick = u64;

/// Ticks per day.
pub const TICKS_PER_DAY: Tick = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmountParseError {
    #[error("empty amount")]
    Empty,
    #[error("malformed decimal `{0}`")]
    Malformed(String),
    #[error("`{0}` has more than {1} fractional digits")]
    TooPrecise(String, u32),
    #[error("`{0}` is negative")]
    Negative(String),
    #[error("`{0}` is out of range")]
    OutOfRange(String),
}

/// Parses a plain decimal string into an integer scaled by `10^scale`.
pub(crate) fn parse_scaled(s: &str, scale: u32) -> Result<i128, AmountParseError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(AmountParseError::Empty);
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if (int_part.is_empty() && frac_part.is_empty())
        || !digits_ok(int_part)
        || !digits_ok(frac_part)
    {
        return Err(AmountParseError::Malformed(s.to_string()));
    }
    if frac_part.len() > scale as usize {
        return Err(AmountParseError::TooPrecise(s.to_string(), scale));
    }
    if int_part.len() > 24 {
        return Err(AmountParseError::OutOfRange(s.to_string()));
    }
    let int_value: i128 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| AmountParseError::Malformed(s.to_string()))?
    };
    let mut frac_value: i128 = 0;
    for i in 0..scale as usize {
        let digit = frac_part
            .as_bytes()
            .get(i)
            .map_or(0, |b| (b - b'0') as i128);
        frac_value = frac_value * 10 + digit;
    }
    let magnitude = int_value
        .checked_mul(10i128.pow(scale))
        .and_then(|v| v.checked_add(frac_value))
        .ok_or_else(|| AmountParseError::OutOfRange(s.to_string()))?;
    Ok(if negative { -magnitude } else { magnitude })
}

/// Renders a scaled integer with exactly `scale` fractional digits.
pub(crate) fn format_scaled(value: i128, scale: u32) -> String {
    let denom = 10i128.pow(scale);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let denom = denom as u128;
    format!(
        "{sign}{}.{:0width$}",
        abs / denom,
        abs % denom,
        width = scale as usize
    )
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

macro_rules! unsigned_fixed {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(u64);

        impl $name {
            pub const ZERO: Self = Self(0);

            pub const fn from_micros(micros: u64) -> Self {
                Self(micros)
            }

            pub const fn from_units(units: u64) -> Self {
                Self(units * MICRO)
            }

            pub const fn micros(self) -> u64 {
                self.0
            }

            pub const fn is_zero(self) -> bool {
                self.0 == 0
            }

            pub fn checked_add(self, other: Self) -> Option<Self> {
                self.0.checked_add(other.0).map(Self)
            }

            pub fn checked_sub(self, other: Self) -> Option<Self> {
                self.0.checked_sub(other.0).map(Self)
            }

            pub fn saturating_sub(self, other: Self) -> Self {
                Self(self.0.saturating_sub(other.0))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&format_scaled(self.0 as i128, 6))
            }
        }

        impl FromStr for $name {
            type Err = AmountParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let v = parse_scaled(s, 6)?;
                if v < 0 {
                    return Err(AmountParseError::Negative(s.to_string()));
                }
                u64::try_from(v)
                    .map(Self)
                    .map_err(|_| AmountParseError::OutOfRange(s.to_string()))
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                Self(iter.map(|a| a.0).sum())
            }
        }

        string_serde!($name);
    };
}

unsigned_fixed!(
    /// A count of tokens held as indivisible micro-tokens.
    TokenAmount
);

unsigned_fixed!(
    /// Non-negative value in the base currency, six fractional digits.
    MonetaryAmount
);

unsigned_fixed!(
    /// A non-negative ratio at micro precision (probabilities, rates,
    /// leakage resistance, counterfeit worth).
    Fraction
);

impl Fraction {
    pub const ONE: Self = Self(MICRO);

    pub fn is_unit_interval(self) -> bool {
        self.0 <= MICRO
    }
}

impl MonetaryAmount {
    /// Value of `tokens` at `self` per display token, rounded down.
    pub fn times_tokens(self, tokens: TokenAmount) -> SignedAmount {
        let v = self.0 as i128 * tokens.micros() as i128 / MICRO as i128;
        SignedAmount(v as i64)
    }

    /// Scales by a fraction, rounded down.
    pub fn scale(self, f: Fraction) -> MonetaryAmount {
        MonetaryAmount((self.0 as u128 * f.micros() as u128 / MICRO as u128) as u64)
    }

    pub fn signed(self) -> SignedAmount {
        SignedAmount(self.0 as i64)
    }
}

/// Signed monetary value (net returns, expected values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SignedAmount(i64);

impl SignedAmount {
    pub const ZERO: Self = Self(0);

    pub const fn from_micros(micros: i64) -> Self {
        Self(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }
}

impl std::ops::Add for SignedAmount {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SignedAmount {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl std::ops::AddAssign for SignedAmount {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::ops::SubAssign for SignedAmount {
    fn sub_assign(&mut self, rhs: Self) {
        self.0 -= rhs.0;
    }
}

impl std::ops::Neg for SignedAmount {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl fmt::Display for SignedAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_scaled(self.0 as i128, 6))
    }
}

impl FromStr for SignedAmount {
    type Err = AmountParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_scaled(s, 6)?;
        i64::try_from(v)
            .map(Self)
            .map_err(|_| AmountParseError::OutOfRange(s.to_string()))
    }
}

string_serde!(SignedAmount);

/// A fraction in basis points, used for quorums and thresholds.
///
/// 66.67% is 6667 bp. Serialized as a decimal string (`"0.6667"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisPoints(u32);

impl BasisPoints {
    pub const ONE: Self = Self(BASIS);

    pub const fn new(bp: u32) -> Self {
        Self(bp)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    /// `weight * 10^4 >= bp * total`, all in integers.
    pub fn is_met(self, weight: TokenAmount, total: TokenAmount) -> bool {
        weight.micros() as u128 * BASIS as u128 >= self.0 as u128 * total.micros() as u128
    }

    /// Smallest weight that meets this fraction of `total`.
    pub fn min_weight(self, total: TokenAmount) -> TokenAmount {
        let need = self.0 as u128 * total.micros() as u128;
        TokenAmount::from_micros(need.div_ceil(BASIS as u128) as u64)
    }
}

impl fmt::Display for BasisPoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_scaled(self.0 as i128, 4))
    }
}

impl FromStr for BasisPoints {
    type Err = AmountParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_scaled(s, 4)?;
        if v < 0 {
            return Err(AmountParseError::Negative(s.to_string()));
        }
        u32::try_from(v)
            .map(Self)
            .map_err(|_| AmountParseError::OutOfRange(s.to_string()))
    }
}

string_serde!(BasisPoints);

/// Identifier of an agent (an account in a ledger).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        assert_eq!("1".parse::<TokenAmount>().unwrap().micros(), 1_000_000);
        assert_eq!("0.000033".parse::<MonetaryAmount>().unwrap().micros(), 33);
        assert_eq!(".5".parse::<Fraction>().unwrap().micros(), 500_000);
        assert_eq!(TokenAmount::from_units(100).to_string(), "100.000000");
        assert_eq!(
            SignedAmount::from_micros(-1_500_000).to_string(),
            "-1.500000"
        );
        assert_eq!(SignedAmount::from_micros(-5).to_string(), "-0.000005");
        assert_eq!("-0.000005".parse::<SignedAmount>().unwrap().micros(), -5);
        assert_eq!("0.6667".parse::<BasisPoints>().unwrap().get(), 6667);
        assert_eq!(BasisPoints::new(5000).to_string(), "0.5000");
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(
            "".parse::<TokenAmount>(),
            Err(AmountParseError::Empty)
        ));
        assert!(matches!(
            "1.0000001".parse::<TokenAmount>(),
            Err(AmountParseError::TooPrecise(..))
        ));
        assert!(matches!(
            "-1".parse::<TokenAmount>(),
            Err(AmountParseError::Negative(_))
        ));
        assert!(matches!(
            "1e3".parse::<TokenAmount>(),
            Err(AmountParseError::Malformed(_))
        ));
        assert!(matches!(
            ".".parse::<TokenAmount>(),
            Err(AmountParseError::Malformed(_))
        ));
        assert!(matches!(
            "0.66667".parse::<BasisPoints>(),
            Err(AmountParseError::TooPrecise(..))
        ));
    }

    #[test]
    fn quorum_threshold_is_integer_exact() {
        let q = BasisPoints::new(6667);
        let supply = TokenAmount::from_units(300);
        assert!(!q.is_met(TokenAmount::from_units(200), supply));
        assert!(q.is_met(TokenAmount::from_units(201), supply));
        // 0.6667 * 300 = 200.01 tokens
        assert_eq!(q.min_weight(supply).micros(), 200_010_000);
    }

    #[test]
    fn serde_uses_strings() {
        let v = serde_json::to_string(&TokenAmount::from_units(2)).unwrap();
        assert_eq!(v, "\"2.000000\"");
        let back: TokenAmount = serde_json::from_str(&v).unwrap();
        assert_eq!(back, TokenAmount::from_units(2));
    }
}
