//! Behavioral models: customer bid policies, driver preference-state
//! choices, and opportunity-cost belief updating.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{CustomerId, DriverId, Tick};
use crate::mechanisms::{AuctionState, CustomerBid, DriverPreference};
use crate::money::{Money, Probability};
use crate::params::MechanismType;
use crate::payoffs::{DriverEconomics, ProbCombinator};

/// Smoothed opportunity-cost beliefs a driver carries across auctions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// Believed net profit of the best alternative ride.
    pub psi_od: Money,
    /// Believed probability of winning such an alternative.
    pub beta_od: Probability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverPolicy {
    /// Markup added on top of break-even for manual bids.
    pub margin: Money,
    /// Preset fraction used by the fraction preference states.
    pub preset_fraction: f64,
    /// Probability of delegating to an automatic preference state.
    pub auto_weight: f64,
    /// Probability of sitting an auction out regardless of profit.
    pub no_bid_weight: f64,
}

impl Default for DriverPolicy {
    fn default() -> Self {
        DriverPolicy {
            margin: Money::from_minor(150),
            preset_fraction: 0.85,
            auto_weight: 0.35,
            no_bid_weight: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub id: DriverId,
    /// Position on the city plane, km.
    pub position: (f64, f64),
    pub speed_kmh: f64,
    /// Quality score in [0, 1].
    pub quality: f64,
    pub economics: DriverEconomics,
    pub policy: DriverPolicy,
    pub beliefs: BeliefState,
    /// Pre-drawn off-duty windows.
    pub off_duty_windows: Vec<(Tick, Tick)>,
}

impl DriverProfile {
    /// Straight-line ETA to a pickup point, in seconds.
    pub fn eta_seconds(&self, pickup: (f64, f64)) -> u64 {
        let dx = pickup.0 - self.position.0;
        let dy = pickup.1 - self.position.1;
        let km = (dx * dx + dy * dy).sqrt();
        (km / self.speed_kmh * 3600.0).round() as u64
    }

    /// Probability-weighted opportunity term entering bid targets.
    pub fn opportunity_term(&self, combinator: ProbCombinator) -> Money {
        let weight = combinator.combine(self.beliefs.beta_od, self.economics.beta_ld);
        Money::from_f64_half_up(weight * self.beliefs.psi_od.as_f64())
    }

    /// Price below which serving a ride cannot cover costs plus the
    /// believed opportunity profit.
    pub fn break_even(&self, combinator: ProbCombinator) -> Money {
        self.economics.total_cost() + self.opportunity_term(combinator)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerPolicy {
    /// T1 range bottom as a fraction of valuation.
    pub range_alpha: f64,
    /// T5 declared floor as a fraction of valuation.
    pub floor_fraction: f64,
    /// Propensity to exercise a revision opportunity.
    pub patience: f64,
}

impl Default for CustomerPolicy {
    fn default() -> Self {
        CustomerPolicy {
            range_alpha: 0.8,
            floor_fraction: 0.7,
            patience: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerRequest {
    pub id: CustomerId,
    pub origin: (f64, f64),
    pub destination: (f64, f64),
    /// Private valuation of the ride.
    pub valuation: Money,
    pub policy: CustomerPolicy,
}

/// Proposes a type-valid customer bid, or declines when the valuation
/// cannot support one.
pub fn propose_customer_bid(
    request: &CustomerRequest,
    mechanism: MechanismType,
    standard_price: Money,
    base_price: Money,
    flex_band: Option<(Money, Money)>,
) -> Option<CustomerBid> {
    let valuation = request.valuation;
    let base_floor = base_price.max(Money::ZERO);
    match mechanism {
        MechanismType::T1 => {
            if valuation <= base_floor {
                return None;
            }
            let low = Money::from_f64_half_up(request.policy.range_alpha * valuation.as_f64())
                .max(base_floor + Money::from_minor(1))
                .min(valuation);
            Some(CustomerBid::Range {
                low,
                high: valuation,
            })
        }
        MechanismType::T2 => (valuation > standard_price).then_some(CustomerBid::Standard {
            price: standard_price,
        }),
        MechanismType::T3 => (valuation > standard_price).then_some(CustomerBid::PriorityMax {
            price: valuation,
        }),
        MechanismType::T4 => {
            let (low, high) = flex_band?;
            if valuation < low {
                return None;
            }
            let price = valuation.min(high);
            (price > base_floor).then_some(CustomerBid::Flex { price })
        }
        MechanismType::T5 => {
            let floor =
                Money::from_f64_half_up(request.policy.floor_fraction * valuation.as_f64())
                    .max(base_floor + Money::from_minor(1));
            (floor <= valuation).then_some(CustomerBid::PriorityMin { price: floor })
        }
    }
}

/// Picks a preference state for a selected driver: an automatic state
/// when the policy delegates and the state clears break-even, otherwise
/// a manual bid at break-even plus margin clipped into the admissible
/// interval, or no-bid when even the interval top is unprofitable.
pub fn choose_driver_action<R: Rng>(
    profile: &DriverProfile,
    auction: &AuctionState,
    combinator: ProbCombinator,
    rng: &mut R,
) -> DriverPreference {
    let break_even = profile.break_even(combinator);
    let (interval_low, interval_high) = agent_bid_interval(auction);
    if interval_high < break_even {
        return DriverPreference::NoBid;
    }
    let roll: f64 = rng.random();
    if roll < profile.policy.no_bid_weight {
        return DriverPreference::NoBid;
    }
    if roll < profile.policy.no_bid_weight + profile.policy.auto_weight {
        if let Some(auto) = auto_state(profile, auction, break_even) {
            return auto;
        }
    }
    let target = break_even + profile.policy.margin;
    DriverPreference::Manual(target.clamp(interval_low, interval_high))
}

/// The interval a rational agent bids into. For T1 the protocol has no
/// upper bound, but bids above the customer cap cannot clear, so the
/// agent treats the cap as the top.
fn agent_bid_interval(auction: &AuctionState) -> (Money, Money) {
    let one = Money::from_minor(1);
    match auction.mechanism {
        MechanismType::T1 => (auction.base_price + one, auction.cap()),
        MechanismType::T2 | MechanismType::T3 | MechanismType::T5 => {
            (auction.base_price, auction.cap())
        }
        MechanismType::T4 => {
            let (low, high) = auction.flex_band().expect("T4 has a flex band");
            (low.max(auction.base_price + one), high)
        }
    }
}

fn auto_state(
    profile: &DriverProfile,
    auction: &AuctionState,
    break_even: Money,
) -> Option<DriverPreference> {
    let candidate = match auction.mechanism {
        MechanismType::T1 => DriverPreference::Midpoint,
        MechanismType::T2 => DriverPreference::AcceptStandard,
        MechanismType::T3 | MechanismType::T5 => {
            DriverPreference::PriorityFraction(profile.policy.preset_fraction.clamp(0.70, 0.99))
        }
        MechanismType::T4 => DriverPreference::AcceptFlex,
    };
    match auction.resolve_preference(candidate) {
        Ok(crate::mechanisms::BidResolution::Bid(price)) if price >= break_even => Some(candidate),
        _ => None,
    }
}

/// One completed auction as observed by a single driver, respecting the
/// privacy rules: only the driver's own bid, selection and win/loss are
/// visible to them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverObservation {
    pub won: bool,
    /// Net profit the driver would have realized at their own bid, for
    /// auctions they lost.
    pub alternative_net_profit: Option<Money>,
}

/// Exponential smoothing of opportunity-cost beliefs over a window of
/// observed auctions. With `lambda` zero, beliefs are stationary.
pub fn update_beliefs(
    beliefs: BeliefState,
    observations: &[DriverObservation],
    lambda: f64,
) -> BeliefState {
    if observations.is_empty() {
        return beliefs;
    }
    let mut beta = beliefs.beta_od.value();
    for obs in observations {
        beta = (1.0 - lambda) * beta + lambda * if obs.won { 1.0 } else { 0.0 };
    }
    let best_alternative = observations
        .iter()
        .filter_map(|o| o.alternative_net_profit)
        .max();
    let psi_od = match best_alternative {
        Some(best) => Money::from_f64_half_up(
            (1.0 - lambda) * beliefs.psi_od.as_f64() + lambda * best.as_f64(),
        )
        .max(Money::ZERO),
        None => beliefs.psi_od,
    };
    BeliefState {
        psi_od,
        beta_od: Probability::new(beta.clamp(0.0, 1.0)).expect("smoothing stays in range"),
    }
}
