//! Per-ride auction state machine: open, select, bid, revise, assign.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bid::{
    fraction_of, midpoint, BidError, BidResolution, CustomerBid, CustomerBidError,
    DriverPreference, RevisionError,
};
use super::lockout::LockoutRegistry;
use super::Quote;
use crate::ids::{CustomerId, DriverId, RideId, Tick};
use crate::money::{apply_fraction, Money};
use crate::params::{MechanismType, ParamsError, PricingParams};

/// Auction lifecycle. Transitions are monotone in this order, except
/// that any phase may fall to `Failed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Opened,
    DriversSelected,
    Bidding,
    Revising,
    Assigned,
    Settled,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailReason {
    /// No eligible driver existed at selection time.
    NoSupply,
    /// The bid window closed without a single valid bid.
    NoBids,
    /// T5: every recorded bid sat at or above the priority floor.
    NoFeasibleBid,
    /// Every bidder acquired a conflicting lockout before assignment.
    AllLockedOut,
    /// T1/T4: the winning bid cleared above the customer cap, so no
    /// trade consummates (the formula value is diagnostic only).
    InfeasibleClearing,
    /// Sibling auction won first; this one was cancelled.
    Cancelled,
}

/// A driver as seen at selection time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSnapshot {
    pub id: DriverId,
    pub eta_seconds: u64,
    pub quality: f64,
    pub off_duty: bool,
    pub busy: bool,
}

/// A driver recorded in the fan-out set, in ETA order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedDriver {
    pub id: DriverId,
    pub eta_seconds: u64,
    pub quality: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct RecordedBid {
    price: Money,
    round: u8,
    tracks_standard: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum AuctionError {
    #[error(transparent)]
    InvalidCustomerBid(#[from] CustomerBidError),
    #[error(transparent)]
    InvalidParams(#[from] ParamsError),
    #[error("standard price {standard} must exceed the base price {base}")]
    StandardNotAboveBase { standard: Money, base: Money },
    #[error("operation not valid in phase {found:?} (expected {expected})")]
    WrongPhase { expected: &'static str, found: Phase },
    #[error("driver {0} is not among the selected drivers")]
    NotSelected(DriverId),
    #[error("driver {0} bid after the window closed")]
    LateBid(DriverId),
    #[error("driver {0} is locked out")]
    LockedOut(DriverId),
    #[error(transparent)]
    RejectedBid(#[from] BidError),
    #[error("driver {0} already bid in this round")]
    AlreadyBid(DriverId),
    #[error(transparent)]
    Revision(#[from] RevisionError),
}

/// One ride's auction instance. Single-writer: owned by the sim event
/// loop; concurrent auctions interact only through [`LockoutRegistry`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuctionState {
    pub ride_id: RideId,
    pub customer: CustomerId,
    pub mechanism: MechanismType,
    phase: Phase,
    /// Quoted standard price (the original, pre-revision value).
    pub standard_price: Money,
    pub base_price: Money,
    flex_low: Option<Money>,
    flex_high: Option<Money>,
    customer_bid: CustomerBid,
    customer_revisions: u8,
    revision_round: u8,
    pub opened_at: Tick,
    pub bid_deadline: Tick,
    pub revision_deadline: Tick,
    selected: Vec<SelectedDriver>,
    bids: BTreeMap<DriverId, RecordedBid>,
    declared_no_bid: BTreeSet<DriverId>,
    exempt_no_bid: BTreeSet<DriverId>,
    withdrawn: BTreeSet<DriverId>,
    pub winning_bid: Option<Money>,
    pub primary: Option<DriverId>,
    pub secondary: Option<DriverId>,
    pub thin_market: bool,
    pub fail_reason: Option<FailReason>,
}

impl AuctionState {
    /// Opens an auction for a quoted ride with a validated customer bid.
    pub fn open(
        ride_id: RideId,
        customer: CustomerId,
        quote: Quote,
        customer_bid: CustomerBid,
        params: &PricingParams,
        now: Tick,
    ) -> Result<AuctionState, AuctionError> {
        params.validate()?;
        let mechanism = params.mechanism;
        if !customer_bid.matches_mechanism(mechanism) {
            return Err(CustomerBidError::WrongShape(mechanism).into());
        }
        if mechanism != MechanismType::T1 && quote.standard_price <= quote.base_price {
            return Err(AuctionError::StandardNotAboveBase {
                standard: quote.standard_price,
                base: quote.base_price,
            });
        }
        let (flex_low, flex_high) = if mechanism == MechanismType::T4 {
            let low = apply_fraction(quote.standard_price, 1.0 - params.flex_band)
                .expect("validated flex band");
            let high = apply_fraction(quote.standard_price, 1.0 + params.flex_band)
                .expect("validated flex band");
            (Some(low), Some(high))
        } else {
            (None, None)
        };
        validate_customer_bid(&customer_bid, quote, flex_low, flex_high)?;
        Ok(AuctionState {
            ride_id,
            customer,
            mechanism,
            phase: Phase::Opened,
            standard_price: quote.standard_price,
            base_price: quote.base_price,
            flex_low,
            flex_high,
            customer_bid,
            customer_revisions: 0,
            revision_round: 0,
            opened_at: now,
            bid_deadline: now.plus(params.bid_window),
            revision_deadline: now.plus(params.revision_window),
            selected: Vec::new(),
            bids: BTreeMap::new(),
            declared_no_bid: BTreeSet::new(),
            exempt_no_bid: BTreeSet::new(),
            withdrawn: BTreeSet::new(),
            winning_bid: None,
            primary: None,
            secondary: None,
            thin_market: false,
            fail_reason: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn customer_bid(&self) -> CustomerBid {
        self.customer_bid
    }

    pub fn customer_revisions(&self) -> u8 {
        self.customer_revisions
    }

    pub fn selected(&self) -> &[SelectedDriver] {
        &self.selected
    }

    pub fn is_selected(&self, driver: DriverId) -> bool {
        self.selected.iter().any(|s| s.id == driver)
    }

    pub fn bids(&self) -> impl Iterator<Item = (DriverId, Money)> + '_ {
        self.bids.iter().map(|(id, bid)| (*id, bid.price))
    }

    pub fn bid_of(&self, driver: DriverId) -> Option<Money> {
        self.bids.get(&driver).map(|b| b.price)
    }

    pub fn flex_band(&self) -> Option<(Money, Money)> {
        self.flex_low.zip(self.flex_high)
    }

    /// The customer-side clearing bound (see [`CustomerBid::cap`]).
    pub fn cap(&self) -> Money {
        self.customer_bid.cap()
    }

    /// Standard price fed to the clearing expression: the revised value
    /// for T2, the quoted value otherwise.
    pub fn clearing_standard(&self) -> Money {
        match self.mechanism {
            MechanismType::T2 => self.customer_bid.cap(),
            _ => self.standard_price,
        }
    }

    /// Type ceiling every recorded bid must respect (`None` for T1,
    /// whose manual bids are unbounded above).
    pub fn bid_ceiling(&self) -> Option<Money> {
        match self.mechanism {
            MechanismType::T1 => None,
            MechanismType::T2 => Some(self.customer_bid.cap()),
            MechanismType::T3 | MechanismType::T5 => Some(self.customer_bid.cap()),
            MechanismType::T4 => self.flex_high,
        }
    }

    /// Admissibility of a concrete price under the type rules.
    pub fn bid_admissible(&self, price: Money) -> bool {
        let base = self.base_price;
        match self.mechanism {
            MechanismType::T1 => price > base,
            MechanismType::T2 | MechanismType::T3 | MechanismType::T5 => {
                price >= base && price <= self.customer_bid.cap()
            }
            MechanismType::T4 => {
                let (low, high) = self.flex_band().expect("T4 has a flex band");
                price > base && price >= low && price <= high
            }
        }
    }

    fn advance_phase(&mut self, next: Phase) {
        debug_assert!(
            next == Phase::Failed || next >= self.phase,
            "phase transitions are monotone: {:?} -> {next:?}",
            self.phase
        );
        self.phase = next;
    }

    pub fn fail(&mut self, reason: FailReason) {
        self.fail_reason = Some(reason);
        self.advance_phase(Phase::Failed);
    }

    /// Marks a selected driver as unable to respond through no fault of
    /// their own (lockout acquired mid-auction); exempt from the fee.
    pub fn record_exempt_no_bid(&mut self, driver: DriverId) {
        if self.is_selected(driver) && !self.bids.contains_key(&driver) {
            self.exempt_no_bid.insert(driver);
        }
    }

    pub fn mark_settled(&mut self) {
        debug_assert_eq!(self.phase, Phase::Assigned);
        self.advance_phase(Phase::Settled);
    }

    /// Fans the request out to the nearest eligible drivers, at most
    /// `max_selected`, ranked by ETA. Fewer than `min_selected` eligible
    /// drivers flags a thin market; zero fails the auction.
    pub fn select_drivers(
        &mut self,
        fleet: &[DriverSnapshot],
        registry: &LockoutRegistry,
        params: &PricingParams,
        now: Tick,
    ) -> Result<(), AuctionError> {
        if self.phase != Phase::Opened {
            return Err(AuctionError::WrongPhase {
                expected: "Opened",
                found: self.phase,
            });
        }
        let mut eligible: Vec<&DriverSnapshot> = fleet
            .iter()
            .filter(|d| {
                !d.off_duty
                    && !d.busy
                    && !registry.is_off_duty(d.id)
                    && !registry.is_blocked(d.id, now)
            })
            .collect();
        eligible.sort_by(|a, b| a.eta_seconds.cmp(&b.eta_seconds).then(a.id.cmp(&b.id)));
        if eligible.is_empty() {
            self.fail(FailReason::NoSupply);
            return Ok(());
        }
        self.thin_market = eligible.len() < params.min_selected;
        self.selected = eligible
            .into_iter()
            .take(params.max_selected)
            .map(|d| SelectedDriver {
                id: d.id,
                eta_seconds: d.eta_seconds,
                quality: d.quality,
            })
            .collect();
        self.advance_phase(Phase::DriversSelected);
        Ok(())
    }

    /// Resolves a preference state into a bid (or a recorded no-bid) for
    /// this auction.
    pub fn resolve_preference(
        &self,
        preference: DriverPreference,
    ) -> Result<BidResolution, BidError> {
        use DriverPreference::*;
        use MechanismType::*;
        let mech = self.mechanism;
        let standard = self.clearing_standard();
        let admissible_or = |price: Money, err: bool| -> Result<BidResolution, BidError> {
            if self.bid_admissible(price) {
                Ok(BidResolution::Bid(price))
            } else if err {
                Err(BidError::OutsideInterval {
                    mechanism: mech,
                    price,
                })
            } else {
                Ok(BidResolution::NoBid { exempt: true })
            }
        };
        match (mech, preference) {
            (_, NoBid) => Ok(BidResolution::NoBid { exempt: false }),
            (_, Manual(price)) => admissible_or(price, true),
            (T1, Midpoint) => {
                let (low, high) = match self.customer_bid {
                    CustomerBid::Range { low, high } => (low, high),
                    _ => unreachable!("T1 carries a range bid"),
                };
                admissible_or(midpoint(low, high), false)
            }
            (T2 | T4, AcceptStandard) => admissible_or(standard, false),
            (T3 | T5, AcceptStandard) => admissible_or(self.standard_price, false),
            (T3 | T5, AcceptPriority) => admissible_or(self.customer_bid.cap(), false),
            (T3 | T5, PriorityFraction(fraction)) => {
                if !(0.70..=0.99).contains(&fraction) {
                    return Err(BidError::FractionOutOfRange(fraction));
                }
                let price = fraction_of(self.customer_bid.cap(), fraction);
                // The fraction state must still exceed the standard price.
                if price <= self.standard_price {
                    return Ok(BidResolution::NoBid { exempt: true });
                }
                admissible_or(price, false)
            }
            (T4, AcceptFlex) => admissible_or(self.customer_bid.cap(), false),
            (T4, StandardFraction(fraction)) => {
                if !fraction.is_finite() || fraction <= 0.0 {
                    return Err(BidError::FractionOutOfRange(fraction));
                }
                admissible_or(fraction_of(self.standard_price, fraction), false)
            }
            _ => Err(BidError::InvalidPreference(mech)),
        }
    }

    /// Submits a driver's preference for this auction. Auto states
    /// compute the bid; manual states are validated against the type's
    /// admissible interval; no-bid states are recorded.
    pub fn submit_bid(
        &mut self,
        driver: DriverId,
        preference: DriverPreference,
        registry: &LockoutRegistry,
        now: Tick,
    ) -> Result<BidResolution, AuctionError> {
        if !matches!(
            self.phase,
            Phase::DriversSelected | Phase::Bidding | Phase::Revising
        ) {
            return Err(AuctionError::WrongPhase {
                expected: "DriversSelected | Bidding | Revising",
                found: self.phase,
            });
        }
        if !self.is_selected(driver) {
            return Err(AuctionError::NotSelected(driver));
        }
        if registry.is_blocked(driver, now) {
            return Err(AuctionError::LockedOut(driver));
        }
        let existing = self.bids.get(&driver).copied();
        let revising = existing.is_some_and(|bid| bid.round < self.revision_round);
        let deadline_ok = if revising {
            now <= self.revision_deadline
        } else {
            now <= self.bid_deadline
        };
        if !deadline_ok {
            return Err(AuctionError::LateBid(driver));
        }
        if (existing.is_some() && !revising) || self.withdrawn.contains(&driver) {
            return Err(AuctionError::AlreadyBid(driver));
        }
        let resolution = self.resolve_preference(preference)?;
        match resolution {
            BidResolution::Bid(price) => {
                self.bids.insert(
                    driver,
                    RecordedBid {
                        price,
                        round: self.revision_round,
                        tracks_standard: matches!(preference, DriverPreference::AcceptStandard)
                            && self.mechanism == MechanismType::T2,
                    },
                );
                self.declared_no_bid.remove(&driver);
                self.exempt_no_bid.remove(&driver);
                if self.phase == Phase::DriversSelected {
                    self.advance_phase(Phase::Bidding);
                }
            }
            BidResolution::NoBid { exempt } => {
                self.bids.remove(&driver);
                if exempt {
                    self.exempt_no_bid.insert(driver);
                } else {
                    self.declared_no_bid.insert(driver);
                }
            }
        }
        Ok(resolution)
    }

    /// Revises the customer's bid under the type's count/direction
    /// rules. T1/T3 revisions open a one-revision round for drivers.
    pub fn revise_customer(
        &mut self,
        new_bid: CustomerBid,
        now: Tick,
    ) -> Result<(), RevisionError> {
        if !matches!(
            self.phase,
            Phase::Opened | Phase::DriversSelected | Phase::Bidding | Phase::Revising
        ) {
            return Err(RevisionError::WrongPhase);
        }
        if now > self.revision_deadline {
            return Err(RevisionError::WindowExpired);
        }
        use CustomerBid::*;
        match (self.mechanism, self.customer_bid, new_bid) {
            (MechanismType::T1, Range { low, high }, Range { low: nl, high: nh }) => {
                if self.customer_revisions >= 2 {
                    return Err(RevisionError::CountExhausted { limit: 2 });
                }
                if nl > nh {
                    return Err(RevisionError::ShapeMismatch);
                }
                // Upwards only: neither endpoint may fall, one must rise.
                if nl < low || nh < high || (nl == low && nh == high) {
                    return Err(RevisionError::WrongDirection);
                }
            }
            (MechanismType::T2, Standard { price }, Standard { price: np }) => {
                if self.customer_revisions >= 1 {
                    return Err(RevisionError::CountExhausted { limit: 1 });
                }
                if np >= price {
                    return Err(RevisionError::WrongDirection);
                }
                if np <= self.base_price {
                    return Err(RevisionError::BelowBase {
                        price: np,
                        base: self.base_price,
                    });
                }
            }
            (MechanismType::T3, PriorityMax { price }, PriorityMax { price: np }) => {
                if self.customer_revisions >= 2 {
                    return Err(RevisionError::CountExhausted { limit: 2 });
                }
                if np <= price {
                    return Err(RevisionError::WrongDirection);
                }
            }
            (MechanismType::T5, PriorityMin { price }, PriorityMin { price: np }) => {
                if self.customer_revisions >= 1 {
                    return Err(RevisionError::CountExhausted { limit: 1 });
                }
                if np <= price {
                    return Err(RevisionError::WrongDirection);
                }
            }
            (MechanismType::T4, _, _) => return Err(RevisionError::NotAllowed),
            _ => return Err(RevisionError::ShapeMismatch),
        }
        self.customer_bid = new_bid;
        self.customer_revisions += 1;
        if matches!(self.mechanism, MechanismType::T1 | MechanismType::T3) {
            // Each participating driver may revise once per round.
            self.revision_round += 1;
        }
        if self.mechanism == MechanismType::T2 {
            self.retrack_after_standard_revision();
        }
        if self.phase >= Phase::Bidding {
            self.advance_phase(Phase::Revising);
        }
        Ok(())
    }

    /// After a T2 downward revision: accept-standard bids re-track the
    /// new price; manual bids above the new ceiling are withdrawn (a
    /// driver is never held to a price below their submitted bid).
    fn retrack_after_standard_revision(&mut self) {
        let ceiling = self.customer_bid.cap();
        let mut withdrawn = Vec::new();
        for (driver, bid) in self.bids.iter_mut() {
            if bid.tracks_standard {
                bid.price = ceiling;
            } else if bid.price > ceiling {
                withdrawn.push(*driver);
            }
        }
        for driver in withdrawn {
            self.bids.remove(&driver);
            self.withdrawn.insert(driver);
            self.exempt_no_bid.insert(driver);
        }
    }

    /// Closes the bid window: returns the selected drivers that owe the
    /// no-bid fee (never bid, hold no exemption, and the type charges it).
    pub fn close_bidding(&mut self, params: &PricingParams) -> Vec<DriverId> {
        if !params.charge_no_bid_fee {
            return Vec::new();
        }
        self.selected
            .iter()
            .map(|s| s.id)
            .filter(|id| !self.bids.contains_key(id) && !self.exempt_no_bid.contains(id))
            .collect()
    }

    /// Assigns the primary and secondary drivers under the type's
    /// ranking, skipping bidders whose lockout would conflict or who
    /// are physically unavailable (still on a ride), and reserves the
    /// primary's lockout interval.
    pub fn assign(
        &mut self,
        registry: &mut LockoutRegistry,
        params: &PricingParams,
        now: Tick,
        unavailable: &BTreeSet<DriverId>,
    ) -> Result<(), AuctionError> {
        if !matches!(
            self.phase,
            Phase::DriversSelected | Phase::Bidding | Phase::Revising
        ) {
            return Err(AuctionError::WrongPhase {
                expected: "DriversSelected | Bidding | Revising",
                found: self.phase,
            });
        }
        if self.bids.is_empty() {
            self.fail(FailReason::NoBids);
            return Ok(());
        }
        let mut candidates: Vec<(DriverId, Money, u64, f64)> = self
            .bids
            .iter()
            .map(|(id, bid)| {
                let sel = self
                    .selected
                    .iter()
                    .find(|s| s.id == *id)
                    .expect("bidders are selected");
                (*id, bid.price, sel.eta_seconds, sel.quality)
            })
            .collect();
        if self.mechanism == MechanismType::T5 {
            let floor = self.customer_bid.cap();
            candidates.retain(|(_, price, _, _)| *price < floor);
            if candidates.is_empty() {
                self.fail(FailReason::NoFeasibleBid);
                return Ok(());
            }
        }
        candidates.sort_by(|a, b| rank_candidates(self.mechanism, a, b));
        let from = now.minus(params.lockout_before);
        let to = now.plus(params.lockout_after);
        let mut free = candidates.iter().filter(|(id, _, _, _)| {
            !unavailable.contains(id) && !registry.would_overlap(*id, from, to)
        });
        let Some(&(primary, price, _, _)) = free.next() else {
            self.fail(FailReason::AllLockedOut);
            return Ok(());
        };
        self.secondary = free.next().map(|&(id, _, _, _)| id);
        registry
            .reserve(primary, from, to)
            .expect("winner was checked against the registry");
        self.primary = Some(primary);
        self.winning_bid = Some(price);
        self.advance_phase(Phase::Assigned);
        Ok(())
    }
}

/// Assignment order: best price first (lowest for T1-T4, highest for
/// T5), then lower ETA, then higher quality score, then driver id.
fn rank_candidates(
    mechanism: MechanismType,
    a: &(DriverId, Money, u64, f64),
    b: &(DriverId, Money, u64, f64),
) -> Ordering {
    let price = match mechanism {
        MechanismType::T5 => b.1.cmp(&a.1),
        _ => a.1.cmp(&b.1),
    };
    price
        .then(a.2.cmp(&b.2))
        .then(b.3.partial_cmp(&a.3).expect("quality scores are finite"))
        .then(a.0.cmp(&b.0))
}

fn validate_customer_bid(
    bid: &CustomerBid,
    quote: Quote,
    flex_low: Option<Money>,
    flex_high: Option<Money>,
) -> Result<(), CustomerBidError> {
    let base_floor = quote.base_price.max(Money::ZERO);
    match *bid {
        CustomerBid::Range { low, high } => {
            if low > high {
                return Err(CustomerBidError::InvertedRange { low, high });
            }
            if high <= base_floor {
                return Err(CustomerBidError::CapNotAboveBase {
                    cap: high,
                    base: quote.base_price,
                });
            }
        }
        CustomerBid::Standard { price } => {
            if price != quote.standard_price {
                return Err(CustomerBidError::NotAtStandard {
                    price,
                    standard: quote.standard_price,
                });
            }
        }
        CustomerBid::PriorityMax { price } => {
            if price <= quote.standard_price {
                return Err(CustomerBidError::PriorityNotAboveStandard {
                    price,
                    standard: quote.standard_price,
                });
            }
        }
        CustomerBid::Flex { price } => {
            let (low, high) = (
                flex_low.expect("T4 flex band"),
                flex_high.expect("T4 flex band"),
            );
            if price < low || price > high {
                return Err(CustomerBidError::OutsideFlexBand { price, low, high });
            }
            if price <= base_floor {
                return Err(CustomerBidError::CapNotAboveBase {
                    cap: price,
                    base: quote.base_price,
                });
            }
        }
        CustomerBid::PriorityMin { price } => {
            if price <= base_floor {
                return Err(CustomerBidError::FloorNotAboveBase {
                    price,
                    base: quote.base_price,
                });
            }
        }
    }
    Ok(())
}
