//! Customer bids and driver preference states, with the per-type
//! admissibility and revision rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;
use crate::params::MechanismType;

/// A customer's price declaration, one shape per mechanism type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CustomerBid {
    /// T1: free min/max range; the range top is the clearing cap.
    Range { low: Money, high: Money },
    /// T2: the accepted (and possibly once-revised) standard price.
    Standard { price: Money },
    /// T3: highest price the customer is willing to pay.
    PriorityMax { price: Money },
    /// T4: flex bid inside the +/- band around the standard price.
    Flex { price: Money },
    /// T5: lowest price the customer is willing to pay.
    PriorityMin { price: Money },
}

impl CustomerBid {
    /// The customer-side clearing bound: range top for T1, the declared
    /// price otherwise.
    pub fn cap(&self) -> Money {
        match *self {
            CustomerBid::Range { high, .. } => high,
            CustomerBid::Standard { price }
            | CustomerBid::PriorityMax { price }
            | CustomerBid::Flex { price }
            | CustomerBid::PriorityMin { price } => price,
        }
    }

    pub fn matches_mechanism(&self, mechanism: MechanismType) -> bool {
        matches!(
            (self, mechanism),
            (CustomerBid::Range { .. }, MechanismType::T1)
                | (CustomerBid::Standard { .. }, MechanismType::T2)
                | (CustomerBid::PriorityMax { .. }, MechanismType::T3)
                | (CustomerBid::Flex { .. }, MechanismType::T4)
                | (CustomerBid::PriorityMin { .. }, MechanismType::T5)
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CustomerBidError {
    #[error("bid shape does not match mechanism {0:?}")]
    WrongShape(MechanismType),
    #[error("customer range is inverted (low {low} > high {high})")]
    InvertedRange { low: Money, high: Money },
    #[error("range top {cap} must exceed the base price {base}")]
    CapNotAboveBase { cap: Money, base: Money },
    #[error("T2 bid {price} must equal the quoted standard price {standard}")]
    NotAtStandard { price: Money, standard: Money },
    #[error("priority price {price} must exceed the standard price {standard}")]
    PriorityNotAboveStandard { price: Money, standard: Money },
    #[error("flex bid {price} outside the band [{low}, {high}]")]
    OutsideFlexBand { price: Money, low: Money, high: Money },
    #[error("priority floor {price} must exceed the base price {base}")]
    FloorNotAboveBase { price: Money, base: Money },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RevisionError {
    #[error("revision window expired")]
    WindowExpired,
    #[error("revision count exhausted (limit {limit})")]
    CountExhausted { limit: u8 },
    #[error("revision direction violates the type rule")]
    WrongDirection,
    #[error("revised price {price} must stay above the base price {base}")]
    BelowBase { price: Money, base: Money },
    #[error("mechanism does not allow customer revisions")]
    NotAllowed,
    #[error("revision shape does not match the standing bid")]
    ShapeMismatch,
    #[error("auction is not accepting revisions in this phase")]
    WrongPhase,
}

/// A selected driver's pre-set response mode for one auction.
///
/// The manual and fraction states carry the driver's own number; the
/// accept states compute the bid from the auction's standing prices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriverPreference {
    /// Accept the customer's priority price (T3/T5).
    AcceptPriority,
    /// Bid at the standard price (T2, T3/T5, T4).
    AcceptStandard,
    /// Accept the customer's flex bid (T4).
    AcceptFlex,
    /// Bid the midpoint of the customer range (T1).
    Midpoint,
    /// Bid a preset fraction of the priority price (T3/T5, 0.70-0.99).
    PriorityFraction(f64),
    /// Bid a preset fraction of the standard price within the flex band (T4).
    StandardFraction(f64),
    /// Manual bid, validated against the type's admissible interval.
    Manual(Money),
    /// Decline to bid.
    NoBid,
}

/// What a preference state resolves to for a concrete auction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BidResolution {
    Bid(Money),
    /// No bid recorded. `exempt` marks auto states that could not
    /// produce an admissible bid; those are not charged the no-bid fee.
    NoBid { exempt: bool },
}

#[derive(Debug, Error, PartialEq)]
pub enum BidError {
    #[error("preference state is not defined for mechanism {0:?}")]
    InvalidPreference(MechanismType),
    #[error("priority fraction {0} outside [0.70, 0.99]")]
    FractionOutOfRange(f64),
    #[error("bid {price} outside the admissible interval for {mechanism:?}")]
    OutsideInterval {
        mechanism: MechanismType,
        price: Money,
    },
}

pub(crate) fn midpoint(low: Money, high: Money) -> Money {
    Money::from_f64_half_up((low.minor() as f64 + high.minor() as f64) / 2.0)
}

pub(crate) fn fraction_of(price: Money, fraction: f64) -> Money {
    Money::from_f64_half_up(price.as_f64() * fraction)
}
