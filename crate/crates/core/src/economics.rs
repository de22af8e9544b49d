//! Closed-form incentive calculators.
//!
//! Everything here is exact rational arithmetic. Values are rendered to
//! six-digit fixed point only at the boundary, so these functions can serve
//! as the reference that Monte Carlo estimates are checked against.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::units::{Fraction, MonetaryAmount, SignedAmount, TokenAmount, MICRO};

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EconError {
    #[error("division by zero: {0} must be positive")]
    DivisionByZero(&'static str),
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: String,
        domain: &'static str,
    },
    #[error("cannot parse `{0}` as an exact number")]
    Parse(String),
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn micro_ratio(micros: i128) -> Rational {
    Rational::new(BigInt::from(micros), BigInt::from(MICRO))
}

pub fn from_tokens(v: TokenAmount) -> Rational {
    micro_ratio(v.micros() as i128)
}

pub fn from_money(v: MonetaryAmount) -> Rational {
    micro_ratio(v.micros() as i128)
}

pub fn from_signed(v: SignedAmount) -> Rational {
    micro_ratio(v.micros() as i128)
}

pub fn from_fraction(v: Fraction) -> Rational {
    micro_ratio(v.micros() as i128)
}

/// Parses `12`, `-0.125` or `1/101` exactly.
pub fn parse_rational(s: &str) -> Result<Rational, EconError> {
    let err = || EconError::Parse(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (ip, fp) = body.split_once('.').unwrap_or((body, ""));
    if (ip.is_empty() && fp.is_empty())
        || !ip.bytes().all(|b| b.is_ascii_digit())
        || !fp.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(err());
    }
    let digits = format!("{ip}{fp}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| err())?
    };
    let denom = num_traits::pow(BigInt::from(10), fp.len());
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Rounds to micro-units, half away from zero.
pub fn round_micros(r: &Rational) -> BigInt {
    let scaled = r * int(MICRO as i64);
    let half = Rational::new(BigInt::one(), BigInt::from(2));
    if scaled.is_negative() {
        -((-scaled) + half).floor().to_integer()
    } else {
        (scaled + half).floor().to_integer()
    }
}

/// Six-digit fixed point, e.g. `49.009901`.
pub fn render_fixed(r: &Rational) -> String {
    let m = round_micros(r);
    let neg = m.is_negative();
    let abs = m.abs();
    let million = BigInt::from(MICRO);
    let whole = &abs / &million;
    let frac = &abs % &million;
    format!("{}{}.{:06}", if neg { "-" } else { "" }, whole, frac)
}

/// Fixed point with trailing zeros trimmed, e.g. `10` or `0.333333`.
pub fn render_plain(r: &Rational) -> String {
    let s = render_fixed(r);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Rounds to a signed fixed-point amount.
pub fn to_signed_amount(r: &Rational) -> SignedAmount {
    let m: i64 =
        round_micros(r)
            .try_into()
            .unwrap_or(if r.is_negative() { i64::MIN } else { i64::MAX });
    SignedAmount::from_micros(m)
}

/// Number of liveness checks per element worth paying for: `kD / (cN)`.
pub fn liveness_budget(
    k: u64,
    sale_value: &Rational,
    check_cost: &Rational,
    elements: u64,
) -> Result<Rational, EconError> {
    if !check_cost.is_positive() {
        return Err(EconError::DivisionByZero("check cost c"));
    }
    if elements == 0 {
        return Err(EconError::DivisionByZero("element count N"));
    }
    Ok(int(k as i64) * sale_value / (check_cost * int(elements as i64)))
}

/// Expected return of an honest member: `αkD`.
pub fn honest_ev(alpha: &Rational, k: u64, price: &Rational) -> Rational {
    alpha * int(k as i64) * price
}

/// Expected return of a member who leaks:
/// `−p·D + (1 − p)(βαk + γℓ)·D`.
pub fn dishonest_ev(
    p_detect: &Rational,
    beta: &Rational,
    gamma: &Rational,
    alpha: &Rational,
    k: u64,
    ell: u64,
    price: &Rational,
) -> Rational {
    let undetected = beta * alpha * int(k as i64) + gamma * int(ell as i64);
    -(p_detect * price) + (Rational::one() - p_detect) * undetected * price
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlphaThreshold {
    /// Leaking loses money exactly when `α` is below this value.
    Finite(Rational),
    /// `(1 − p)βk = 0`: the ownership term never rewards leaking.
    Unbounded,
}

impl fmt::Display for AlphaThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(r) => f.write_str(&render_plain(r)),
            Self::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Ownership fraction below which leaking has negative expected value:
/// `α < (p − (1 − p)γℓ) / ((1 − p)βk)`.
pub fn dishonest_alpha_threshold(
    p_detect: &Rational,
    beta: &Rational,
    gamma: &Rational,
    k: u64,
    ell: u64,
) -> AlphaThreshold {
    let q = Rational::one() - p_detect;
    let denom = &q * beta * int(k as i64);
    if denom.is_zero() {
        return AlphaThreshold::Unbounded;
    }
    let numer = p_detect - &q * gamma * int(ell as i64);
    AlphaThreshold::Finite(numer / denom)
}

/// Expected return for contributing an element: `αkD − E`.
pub fn contribution_ev(alpha: &Rational, k: u64, price: &Rational, cost: &Rational) -> Rational {
    honest_ev(alpha, k, price) - cost
}

/// Price at which contributing breaks even: `E·#T / (k·reward)`.
pub fn min_data_price(
    cost: &Rational,
    supply: &Rational,
    k: u64,
    reward: &Rational,
) -> Result<Rational, EconError> {
    if k == 0 {
        return Err(EconError::DivisionByZero("future sales k"));
    }
    if !reward.is_positive() {
        return Err(EconError::DivisionByZero("candidate reward"));
    }
    Ok(cost * supply / (int(k as i64) * reward))
}

/// Heuristic unit value of a token: `R / #T`.
pub fn token_unit_value(
    future_rewards: &Rational,
    supply: &Rational,
) -> Result<Rational, EconError> {
    if !supply.is_positive() {
        return Err(EconError::DivisionByZero("token supply"));
    }
    Ok(future_rewards / supply)
}

/// Every symbol the calculators use, with domain checks.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveParams {
    /// Membership or sale price `D`.
    pub price: Rational,
    /// Future membership sales `k`.
    pub future_sales: u64,
    /// Counterfeit sales `ℓ`.
    pub counterfeit_sales: u64,
    /// Cost of one liveness check `c`.
    pub check_cost: Rational,
    /// Element count `N`.
    pub elements: u64,
    /// Fractional ownership `α`.
    pub alpha: Rational,
    /// Leakage resistance `β`.
    pub beta: Rational,
    /// Counterfeit worth `γ`.
    pub gamma: Rational,
    pub p_detect: Rational,
    /// Acquisition cost `E`.
    pub acquisition_cost: Rational,
    pub supply: Rational,
    pub reward: Rational,
    /// Discounted future rewards `R`.
    pub future_rewards: Rational,
}

impl Default for IncentiveParams {
    fn default() -> Self {
        Self {
            price: int(1),
            future_sales: 1,
            counterfeit_sales: 0,
            check_cost: int(1),
            elements: 1,
            alpha: Rational::zero(),
            beta: int(1),
            gamma: Rational::zero(),
            p_detect: Rational::zero(),
            acquisition_cost: Rational::zero(),
            supply: int(1),
            reward: int(1),
            future_rewards: Rational::zero(),
        }
    }
}

impl IncentiveParams {
    pub fn validate(&self) -> Result<(), EconError> {
        let unit = |name, v: &Rational| {
            if v.is_negative() || v > &Rational::one() {
                Err(EconError::Domain {
                    name,
                    value: render_plain(v),
                    domain: "[0, 1]",
                })
            } else {
                Ok(())
            }
        };
        let non_negative = |name, v: &Rational| {
            if v.is_negative() {
                Err(EconError::Domain {
                    name,
                    value: render_plain(v),
                    domain: "[0, inf)",
                })
            } else {
                Ok(())
            }
        };
        unit("beta", &self.beta)?;
        unit("p_detect", &self.p_detect)?;
        unit("alpha", &self.alpha)?;
        non_negative("gamma", &self.gamma)?;
        non_negative("price", &self.price)?;
        non_negative("check_cost", &self.check_cost)?;
        non_negative("acquisition_cost", &self.acquisition_cost)?;
        non_negative("supply", &self.supply)?;
        non_negative("reward", &self.reward)?;
        non_negative("future_rewards", &self.future_rewards)?;
        Ok(())
    }

    pub fn liveness_budget(&self) -> Result<Rational, EconError> {
        liveness_budget(
            self.future_sales,
            &self.price,
            &self.check_cost,
            self.elements,
        )
    }

    pub fn honest_ev(&self) -> Rational {
        honest_ev(&self.alpha, self.future_sales, &self.price)
    }

    pub fn dishonest_ev(&self) -> Rational {
        dishonest_ev(
            &self.p_detect,
            &self.beta,
            &self.gamma,
            &self.alpha,
            self.future_sales,
            self.counterfeit_sales,
            &self.price,
        )
    }

    pub fn dishonest_alpha_threshold(&self) -> AlphaThreshold {
        dishonest_alpha_threshold(
            &self.p_detect,
            &self.beta,
            &self.gamma,
            self.future_sales,
            self.counterfeit_sales,
        )
    }

    pub fn contribution_ev(&self) -> Rational {
        contribution_ev(
            &self.alpha,
            self.future_sales,
            &self.price,
            &self.acquisition_cost,
        )
    }

    pub fn min_data_price(&self) -> Result<Rational, EconError> {
        min_data_price(
            &self.acquisition_cost,
            &self.supply,
            self.future_sales,
            &self.reward,
        )
    }

    pub fn token_unit_value(&self) -> Result<Rational, EconError> {
        token_unit_value(&self.future_rewards, &self.supply)
    }
}
