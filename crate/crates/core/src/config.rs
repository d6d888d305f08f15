//! Balancing constants as exact rationals and their admissibility rules.
//!
//! Irrational thresholds are compared by squaring: `alpha >= 1 + sqrt(5)`
//! with `alpha = p/q` becomes `p > q && (p - q)^2 >= 5 q^2`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Parses `"p/q"`, an integer, or a finite decimal such as `"5.47"`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Config(format!("'{s}' is not a rational number"));
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| bad())?;
        let q: i64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(p, q));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 12 {
        return Err(bad());
    }
    let den = 10i64.pow(frac.len() as u32);
    let digits = format!("{int}{frac}");
    let num: i64 = digits.parse().map_err(|_| bad())?;
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

pub fn to_big(r: Rational) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn big_to_f64(r: &BigRational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

/// Compares `a * ra` with `b * rb` exactly.
pub fn cmp_scaled(a: u64, ra: Rational, b: u64, rb: Rational) -> Ordering {
    let lhs = (a as i128)
        .checked_mul(*ra.numer() as i128)
        .and_then(|x| x.checked_mul(*rb.denom() as i128));
    let rhs = (b as i128)
        .checked_mul(*rb.numer() as i128)
        .and_then(|x| x.checked_mul(*ra.denom() as i128));
    match (lhs, rhs) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => {
            let l = BigInt::from(a) * BigInt::from(*ra.numer()) * BigInt::from(*rb.denom());
            let r = BigInt::from(b) * BigInt::from(*rb.numer()) * BigInt::from(*ra.denom());
            l.cmp(&r)
        }
    }
}

/// `a > r * b`.
pub fn exceeds(a: u64, r: Rational, b: u64) -> bool {
    cmp_scaled(a, Rational::one(), b, r) == Ordering::Greater
}

/// `a <= b / r`, i.e. `a * r <= b`.
pub fn at_most_fraction(a: u64, b: u64, r: Rational) -> bool {
    cmp_scaled(a, r, b, Rational::one()) != Ordering::Greater
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    InsertOnly,
    #[default]
    General,
}

impl FromStr for BalanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insert-only" => Ok(BalanceMode::InsertOnly),
            "general" => Ok(BalanceMode::General),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BalanceMode::InsertOnly => "insert-only",
            BalanceMode::General => "general",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BalanceConfig {
    pub alpha: Rational,
    pub beta: Rational,
    pub c0: u64,
    pub mode: BalanceMode,
    /// Whether the run must satisfy the stricter amortized-cost threshold.
    pub accounting: bool,
}

/// `3 (alpha + 2) / alpha`, the smallest admissible `beta`.
pub fn default_beta(alpha: Rational) -> Rational {
    Rational::from_integer(3) * (alpha + Rational::from_integer(2)) / alpha
}

fn sq(x: &BigInt) -> BigInt {
    x * x
}

impl BalanceConfig {
    pub fn new(alpha: Rational, c0: u64, mode: BalanceMode) -> Self {
        BalanceConfig {
            alpha,
            beta: default_beta(alpha),
            c0,
            mode,
            accounting: false,
        }
    }

    pub fn with_beta(mut self, beta: Rational) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_accounting(mut self, accounting: bool) -> Self {
        self.accounting = accounting;
        self
    }

    /// Rejects constants outside the ranges where the imbalance and cost
    /// guarantees hold. The message names the violated inequality.
    pub fn validate(&self) -> Result<()> {
        let reject = |msg: &str| Err(Error::Config(msg.to_string()));
        let p = BigInt::from(*self.alpha.numer());
        let q = BigInt::from(*self.alpha.denom());
        if self.c0 < 1 {
            return reject("c0 must be at least 1");
        }
        match self.mode {
            BalanceMode::InsertOnly => {
                // alpha >= 1 + sqrt5
                let d = &p - &q;
                if !(d.is_positive() && sq(&d) >= BigInt::from(5) * sq(&q)) {
                    return reject("alpha below 1+sqrt5 (insert-only mode)");
                }
            }
            BalanceMode::General => {
                // alpha >= (3 + sqrt33) / 2
                let d = BigInt::from(2) * &p - BigInt::from(3) * &q;
                if !(d.is_positive() && sq(&d) >= BigInt::from(33) * sq(&q)) {
                    return reject("alpha below (3+sqrt33)/2 (general mode)");
                }
                if self.beta <= Rational::from_integer(3) {
                    return reject("beta must exceed 3");
                }
                if self.beta < default_beta(self.alpha) {
                    return reject("beta below 3(alpha+2)/alpha");
                }
                if self.beta > self.alpha {
                    return reject("beta above alpha");
                }
            }
        }
        if self.accounting {
            // alpha > 2 (1 + sqrt3)
            let d = &p - BigInt::from(2) * &q;
            if !(d.is_positive() && sq(&d) > BigInt::from(12) * sq(&q)) {
                return reject("alpha not above 2(1+sqrt3) (cost accounting)");
            }
        }
        Ok(())
    }

    /// The three lower bounds on the potential constant `c`:
    /// `beta`, `2 beta^2 / (beta^2 - 8)` and
    /// `2 alpha^2 (alpha + 2) / (alpha^2 - 4 (alpha + 2))`.
    /// Fails when a denominator is not positive.
    pub fn potential_lower_bounds(&self) -> Result<[BigRational; 3]> {
        let a = to_big(self.alpha);
        let b = to_big(self.beta);
        let two = BigRational::from_integer(2.into());
        let four = BigRational::from_integer(4.into());
        let eight = BigRational::from_integer(8.into());

        let beta_den = &b * &b - &eight;
        if !beta_den.is_positive() {
            return Err(Error::Config("beta^2 - 8 must be positive".into()));
        }
        let alpha_den = &a * &a - &four * (&a + &two);
        if !alpha_den.is_positive() {
            return Err(Error::Config(
                "alpha^2 - 4(alpha+2) must be positive: alpha not above 2(1+sqrt3)".into(),
            ));
        }
        let split_max = &two * &b * &b / beta_den;
        let min_balance = &two * &a * &a * (&a + &two) / alpha_den;
        Ok([b, split_max, min_balance])
    }

    /// Smallest integer strictly above every lower bound on `c`.
    pub fn default_c(&self) -> Result<Rational> {
        let bounds = self.potential_lower_bounds()?;
        let max = bounds.iter().max().unwrap();
        let c = max.floor().to_integer() + BigInt::one();
        let c = c
            .to_i64()
            .ok_or_else(|| Error::Config("potential constant too large".into()))?;
        Ok(Rational::from_integer(c))
    }

    pub fn validate_c(&self, c: Rational) -> Result<()> {
        let c_big = to_big(c);
        for bound in self.potential_lower_bounds()? {
            if c_big <= bound {
                return Err(Error::Config(format!(
                    "c = {c} does not exceed lower bound {}",
                    format_big(&bound)
                )));
            }
        }
        Ok(())
    }
}

pub fn format_big(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        let (q, _) = r.numer().div_rem(r.denom());
        format!("{}/{} (~{q})", r.numer(), r.denom())
    }
}
