//! Exact money and quantity arithmetic.
//!
//! Money is held in piasters (1/100 of a pound) and quantities in thousandths
//! of a unit, so every computation is integer-only. The single place where a
//! quantity meets a price is [`Quantity::times`], which rounds half-up to the
//! nearest piaster.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An amount of money in minor currency units (piasters).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_piasters(piasters: i64) -> Self {
        Money(piasters)
    }

    pub const fn piasters(self) -> i64 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for Money {
    /// Renders as `units.hundredths`, e.g. `6.00` or `-0.05`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = AmountParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed(s, 2).map(Money)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

/// A non-negative quantity with three fractional digits (grams of a
/// kilogram, millilitres of a litre).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quantity(i64);

impl Quantity {
    pub const ZERO: Quantity = Quantity(0);
    pub const SCALE: i64 = 1000;

    /// Builds a quantity from thousandths. Negative input is rejected.
    pub fn from_milli(milli: i64) -> Result<Self, AmountParseError> {
        if milli < 0 {
            return Err(AmountParseError::Negative);
        }
        Ok(Quantity(milli))
    }

    pub fn from_units(units: i64) -> Result<Self, AmountParseError> {
        units.checked_mul(Self::SCALE).ok_or(AmountParseError::Overflow).and_then(Self::from_milli)
    }

    pub const fn milli(self) -> i64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// `self − other`, or `None` when the result would be negative.
    pub fn checked_sub(self, other: Quantity) -> Option<Quantity> {
        (self.0 >= other.0).then(|| Quantity(self.0 - other.0))
    }

    /// Quantity scaled by a whole number of persons.
    pub fn scale(self, persons: u32) -> Quantity {
        Quantity(self.0 * i64::from(persons))
    }

    /// Line value of this quantity at a per-unit price, rounded half-up to
    /// the piaster.
    pub fn times(self, unit_price: Money) -> Money {
        Money(div_round_half_up(i128::from(self.0) * i128::from(unit_price.0), i128::from(Self::SCALE)))
    }
}

impl Mul<Money> for Quantity {
    type Output = Money;
    fn mul(self, rhs: Money) -> Money {
        self.times(rhs)
    }
}

impl Add for Quantity {
    type Output = Quantity;
    fn add(self, rhs: Quantity) -> Quantity {
        Quantity(self.0 + rhs.0)
    }
}

impl Sum for Quantity {
    fn sum<I: Iterator<Item = Quantity>>(iter: I) -> Quantity {
        iter.fold(Quantity::ZERO, Add::add)
    }
}

impl fmt::Display for Quantity {
    /// Always three decimals: `2.000`, `0.500`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / Self::SCALE, self.0 % Self::SCALE)
    }
}

impl FromStr for Quantity {
    type Err = AmountParseError;

    /// Accepts `4`, `4.`, `0.5`, `4.000`; at most three decimals, no sign.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.starts_with('-') {
            return Err(AmountParseError::Negative);
        }
        parse_fixed(s, 3).and_then(Quantity::from_milli)
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AmountParseError {
    #[error("empty amount")]
    Empty,
    #[error("malformed amount")]
    Malformed,
    #[error("too many fractional digits")]
    TooPrecise,
    #[error("negative amount")]
    Negative,
    #[error("amount overflows")]
    Overflow,
}

/// Integer division rounding half away from zero on the positive side and
/// half-up (towards +inf) overall: `floor(n/d + 1/2)`.
fn div_round_half_up(numerator: i128, denominator: i128) -> i64 {
    let doubled = numerator * 2 + denominator;
    let q = doubled.div_euclid(denominator * 2);
    i64::try_from(q).expect("line value exceeds i64")
}

fn parse_fixed(s: &str, decimals: u32) -> Result<i64, AmountParseError> {
    if s.is_empty() {
        return Err(AmountParseError::Empty);
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = match body.split_once('.') {
        Some((w, f)) => (w, f),
        None => (body, ""),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return Err(AmountParseError::Malformed);
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(AmountParseError::Malformed);
    }
    if frac.len() > decimals as usize {
        return Err(AmountParseError::TooPrecise);
    }
    let scale = 10_i64.pow(decimals);
    let whole: i64 = whole.parse().map_err(|_| AmountParseError::Overflow)?;
    let mut frac_value: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| AmountParseError::Malformed)? };
    for _ in frac.len()..decimals as usize {
        frac_value *= 10;
    }
    let value = whole.checked_mul(scale).and_then(|w| w.checked_add(frac_value)).ok_or(AmountParseError::Overflow)?;
    Ok(if negative { -value } else { value })
}
