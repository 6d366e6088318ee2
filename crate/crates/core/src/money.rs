//! Exact integer money arithmetic and the settlement ledger.
//!
//! All prices, fees and ledger entries are signed integer minor units
//! (cents). Settlement paths never touch floating point; fractions are
//! applied through exact rational arithmetic with a single half-up
//! rounding at the final application point.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use thiserror::Error;

use crate::ids::{CustomerId, DriverId};

/// Fractions are carried as rationals over this denominator, which is
/// enough to represent any human-written decimal with nine places.
const FRACTION_SCALE: i128 = 1_000_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MoneyError {
    #[error("fraction {0} outside the admissible range [0, 10]")]
    InvalidFraction(f64),
    #[error("money arithmetic overflow")]
    Overflow,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SettlementError {
    #[error("infeasible settlement: outflows {outflows} exceed payment {payment}")]
    NegativeResidual { payment: Money, outflows: Money },
    #[error("negative settlement component: {0}")]
    NegativeComponent(Money),
}

/// Signed money amount in integer minor units (cents).
#[derive(
    Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_minor(amount: i64) -> Self {
        Money(amount)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, rhs: Money) -> Option<Money> {
        self.0.checked_add(rhs.0).map(Money)
    }

    pub fn checked_sub(self, rhs: Money) -> Option<Money> {
        self.0.checked_sub(rhs.0).map(Money)
    }

    pub fn min(self, rhs: Money) -> Money {
        Money(self.0.min(rhs.0))
    }

    pub fn max(self, rhs: Money) -> Money {
        Money(self.0.max(rhs.0))
    }

    /// Nearest-integer conversion from a real-valued analytics quantity,
    /// ties rounded away from zero. Used only at the boundary where
    /// expected-value analytics are reported as money.
    pub fn from_f64_half_up(value: f64) -> Money {
        Money(round_half_up_f64(value))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl fmt::Debug for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Money({})", self.0)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// Operator arithmetic is overflow-checked: wraparound is never silent.
impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        self.checked_add(rhs).expect("money addition overflow")
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        self.checked_sub(rhs).expect("money subtraction overflow")
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(self.0.checked_neg().expect("money negation overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        *self = *self - rhs;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |acc, m| acc + m)
    }
}

fn round_half_up_f64(value: f64) -> i64 {
    // Ties away from zero, matching the rational rounding below.
    if value >= 0.0 {
        (value + 0.5).floor() as i64
    } else {
        (value - 0.5).ceil() as i64
    }
}

/// Exact rational division `numerator / denominator` rounded half-up
/// (ties away from zero). `denominator` must be positive.
fn div_round_half_up(numerator: i128, denominator: i128) -> i128 {
    debug_assert!(denominator > 0);
    let quotient = numerator / denominator;
    let remainder = numerator % denominator;
    if 2 * remainder.abs() >= denominator {
        quotient + numerator.signum()
    } else {
        quotient
    }
}

/// Converts a config-supplied decimal fraction to an exact rational over
/// [`FRACTION_SCALE`]. Decimals with at most nine places round-trip.
pub(crate) fn fraction_to_scaled(fraction: f64) -> Option<i128> {
    if !fraction.is_finite() {
        return None;
    }
    Some((fraction * FRACTION_SCALE as f64).round() as i128)
}

/// Applies a fractional multiplier to a money amount with half-up
/// rounding at the minor unit. The fraction must lie in `[0, 10]`.
pub fn apply_fraction(amount: Money, fraction: f64) -> Result<Money, MoneyError> {
    if !(0.0..=10.0).contains(&fraction) || !fraction.is_finite() {
        return Err(MoneyError::InvalidFraction(fraction));
    }
    let scaled = fraction_to_scaled(fraction).ok_or(MoneyError::InvalidFraction(fraction))?;
    let numerator = amount.minor() as i128 * scaled;
    let rounded = div_round_half_up(numerator, FRACTION_SCALE);
    i64::try_from(rounded)
        .map(Money::from_minor)
        .map_err(|_| MoneyError::Overflow)
}

/// A party appearing in ledger entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Customer(CustomerId),
    Driver(DriverId),
    Platform,
    TaxAuthority,
    ThirdParty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Money entering the clearing account.
    Inflow,
    /// Money leaving the clearing account.
    Outflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    RidePayment,
    DriverFee,
    Taxes,
    ThirdPartyFee,
    PlatformRetention,
    GuaranteeDiscount,
    FulfillmentFee,
    FulfillmentFeeDriverShare,
    IncentiveFee,
    NoBidFee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub party: Party,
    pub direction: Direction,
    pub amount: Money,
    pub reason: Reason,
}

/// Per-ride settlement record. Every ledger must balance exactly:
/// inflows equal outflows to the minor unit, with no external subsidizer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    pub fn push(&mut self, party: Party, direction: Direction, amount: Money, reason: Reason) {
        self.entries.push(LedgerEntry {
            party,
            direction,
            amount,
            reason,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn inflows(&self) -> Money {
        self.entries
            .iter()
            .filter(|e| e.direction == Direction::Inflow)
            .map(|e| e.amount)
            .sum()
    }

    pub fn outflows(&self) -> Money {
        self.entries
            .iter()
            .filter(|e| e.direction == Direction::Outflow)
            .map(|e| e.amount)
            .sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.inflows() == self.outflows()
    }

    /// Net amount recorded for one party (inflows positive from the
    /// party's perspective: what the party receives minus what it pays).
    pub fn net_for(&self, party: Party) -> Money {
        let mut net = Money::ZERO;
        for entry in &self.entries {
            if entry.party == party {
                match entry.direction {
                    // An inflow to the clearing account is money the party paid.
                    Direction::Inflow => net -= entry.amount,
                    Direction::Outflow => net += entry.amount,
                }
            }
        }
        net
    }
}

/// Settles a plain ride: the platform retains the residual after the
/// driver fee, taxes and third-party fees leave the clearing account.
pub fn settle_ride(
    customer: CustomerId,
    driver: DriverId,
    payment: Money,
    fee: Money,
    taxes: Money,
    third_party: Money,
) -> Result<Ledger, SettlementError> {
    for component in [payment, fee, taxes, third_party] {
        if component.is_negative() {
            return Err(SettlementError::NegativeComponent(component));
        }
    }
    let outflows = fee + taxes + third_party;
    if outflows > payment {
        return Err(SettlementError::NegativeResidual { payment, outflows });
    }
    let retention = payment - outflows;
    let mut ledger = Ledger::new();
    if payment == Money::ZERO && retention == Money::ZERO && outflows == Money::ZERO {
        return Ok(ledger);
    }
    ledger.push(
        Party::Customer(customer),
        Direction::Inflow,
        payment,
        Reason::RidePayment,
    );
    ledger.push(Party::Driver(driver), Direction::Outflow, fee, Reason::DriverFee);
    if taxes > Money::ZERO {
        ledger.push(Party::TaxAuthority, Direction::Outflow, taxes, Reason::Taxes);
    }
    if third_party > Money::ZERO {
        ledger.push(
            Party::ThirdParty,
            Direction::Outflow,
            third_party,
            Reason::ThirdPartyFee,
        );
    }
    ledger.push(
        Party::Platform,
        Direction::Outflow,
        retention,
        Reason::PlatformRetention,
    );
    debug_assert!(ledger.is_balanced());
    Ok(ledger)
}

/// Probability in `[0, 1]`. Appears only in expected-payoff analytics,
/// never in settlement arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    /// Comparison tolerance for probability values.
    pub const EPSILON: f64 = 1e-9;

    pub fn new(value: f64) -> Option<Probability> {
        if value.is_finite() && (-Self::EPSILON..=1.0 + Self::EPSILON).contains(&value) {
            Some(Probability(value.clamp(0.0, 1.0)))
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn approx_eq(self, other: Probability) -> bool {
        (self.0 - other.0).abs() <= Self::EPSILON
    }
}
