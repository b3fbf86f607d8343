use std::fmt;
use std::ops::{Add, Div, Mul};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An exact rational amount of currency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(Ratio<i128>);

impl Money {
    pub const ZERO: Money = Money(Ratio::new_raw(0, 1));

    pub fn from_ratio(numer: i128, denom: i128) -> Self {
        Money(Ratio::new(numer, denom))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    /// Whole cents, rounded half away from zero.
    pub fn cents(&self) -> i128 {
        let scaled = self.0 * Ratio::from_integer(100);
        let (n, d) = (*scaled.numer(), *scaled.denom());
        let q = n / d;
        let r = n % d;
        if 2 * r.abs() >= d {
            q + n.signum()
        } else {
            q
        }
    }

    /// Two-decimal display value, e.g. `4.91`.
    pub fn display_2dp(&self) -> String {
        let c = self.cents();
        let sign = if c < 0 { "-" } else { "" };
        format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
    }

    pub fn to_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Exact text: a terminating decimal when possible, `n/d` otherwise.
    pub fn to_exact_string(&self) -> String {
        let (n, d) = (*self.0.numer(), *self.0.denom());
        let mut rest = d;
        let mut digits = 0u32;
        let (mut twos, mut fives) = (0u32, 0u32);
        while rest % 2 == 0 {
            rest /= 2;
            twos += 1;
        }
        while rest % 5 == 0 {
            rest /= 5;
            fives += 1;
        }
        if rest != 1 {
            return format!("{n}/{d}");
        }
        digits += twos.max(fives);
        let scale = 10i128.pow(digits);
        let scaled = n * (scale / d);
        if digits == 0 {
            return scaled.to_string();
        }
        let sign = if scaled < 0 { "-" } else { "" };
        let abs = scaled.abs();
        let int = abs / scale;
        let frac = abs % scale;
        format!("{sign}{int}.{frac:0width$}", width = digits as usize)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.display_2dp())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseMoneyError(pub String);

impl fmt::Display for ParseMoneyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid amount `{}`", self.0)
    }
}

impl std::error::Error for ParseMoneyError {}

impl FromStr for Money {
    type Err = ParseMoneyError;

    /// Accepts `12`, `0.016`, `$4.91`, `-1.5` and `n/d`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMoneyError(s.to_string());
        let t = s.trim();
        let t = t.strip_prefix('$').unwrap_or(t);
        if let Some((n, d)) = t.split_once('/') {
            let n: Money = n.parse().map_err(|_| err())?;
            let d: Money = d.parse().map_err(|_| err())?;
            if d.0 == Ratio::from_integer(0) {
                return Err(err());
            }
            return Ok(Money(n.0 / d.0));
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(b) => (true, b),
            None => (false, t),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty()
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(err());
        }
        let scale = 10i128.pow(frac.len() as u32);
        let int_v: i128 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let frac_v: i128 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        let n = int_v
            .checked_mul(scale)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(err)?;
        Ok(Money(Ratio::new(if neg { -n } else { n }, scale)))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Mul<u64> for Money {
    type Output = Money;
    fn mul(self, rhs: u64) -> Money {
        Money(self.0 * Ratio::from_integer(i128::from(rhs)))
    }
}

impl Div<u64> for Money {
    type Output = Money;
    fn div(self, rhs: u64) -> Money {
        assert!(rhs != 0, "division by zero");
        Money(self.0 / Ratio::from_integer(i128::from(rhs)))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_exact_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed per-query cost and the number of billed queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub unit_cost: Money,
    pub queries: u64,
}

impl CostLedger {
    pub fn new(unit_cost: Money) -> Self {
        Self {
            unit_cost,
            queries: 0,
        }
    }

    pub fn charge(&mut self) {
        self.queries += 1;
    }

    pub fn total(&self) -> Money {
        ledger_total(self)
    }
}

/// `queries × unit_cost`, exactly.
pub fn ledger_total(ledger: &CostLedger) -> Money {
    ledger.unit_cost * ledger.queries
}
