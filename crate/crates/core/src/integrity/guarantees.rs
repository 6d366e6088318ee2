//! Arrival/fulfillment guarantees, incentive fees, and sensor-based
//! revenue reconciliation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CustomerId, DriverId, Tick};
use crate::money::{apply_fraction, Direction, Ledger, Money, Party, Reason};
use crate::params::MeterRate;

/// Guarantee terms attached to an assigned ride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeTerms {
    /// Arrival time the driver posted at bid time.
    pub promised_arrival: Tick,
    /// Discount rate charged against a late driver, in [0.15, 0.35].
    pub discount_rate: f64,
    /// Customer grace period after the driver arrives, in seconds.
    pub customer_grace_seconds: u64,
    /// Fee by customer lateness beyond the grace period: sorted
    /// `(at_least_seconds, fee)` steps, fees non-decreasing.
    pub fulfillment_fee_schedule: Vec<(u64, Money)>,
    /// Share of the fulfillment fee paid through to the driver.
    pub fulfillment_driver_share: f64,
    /// Incentive payable for completing the ride by the deadline.
    pub incentive_fee: Money,
    pub incentive_deadline: Tick,
}

#[derive(Debug, Error, PartialEq)]
pub enum GuaranteeError {
    #[error("discount rate {0} outside [0.15, 0.35]")]
    DiscountRate(f64),
    #[error("fulfillment fee schedule must be non-decreasing in lateness")]
    ScheduleNotMonotone,
    #[error("fulfillment driver share {0} outside [0, 1]")]
    DriverShare(f64),
}

impl GuaranteeTerms {
    pub fn validate(&self) -> Result<(), GuaranteeError> {
        if !(0.15..=0.35).contains(&self.discount_rate) {
            return Err(GuaranteeError::DiscountRate(self.discount_rate));
        }
        if !(0.0..=1.0).contains(&self.fulfillment_driver_share) {
            return Err(GuaranteeError::DriverShare(self.fulfillment_driver_share));
        }
        let monotone = self
            .fulfillment_fee_schedule
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        if !monotone {
            return Err(GuaranteeError::ScheduleNotMonotone);
        }
        Ok(())
    }

    fn fulfillment_fee_for(&self, lateness_beyond_grace: u64) -> Money {
        if lateness_beyond_grace == 0 {
            return Money::ZERO;
        }
        self.fulfillment_fee_schedule
            .iter()
            .rev()
            .find(|(threshold, _)| *threshold <= lateness_beyond_grace)
            .map_or(Money::ZERO, |(_, fee)| *fee)
    }
}

/// What the guarantees did to one ride's settlement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeAdjustments {
    pub driver_late_seconds: u64,
    pub customer_late_seconds: u64,
    /// Price discount refunded to the customer and charged to the driver.
    pub discount: Money,
    pub fulfillment_fee: Money,
    pub fulfillment_driver_share: Money,
    pub incentive: Money,
    /// The combined deductions would have pushed the driver fee below
    /// zero; the fee was clamped and the platform absorbed the rest.
    pub fee_clamped: bool,
}

/// Applies guarantees to a settled clearing price and emits the
/// balanced ledger: a late driver funds the customer's discount, a late
/// customer pays a fee partly shared with the driver, and an on-time
/// completion earns the platform-funded incentive.
#[allow(clippy::too_many_arguments)]
pub fn apply_guarantees(
    customer: CustomerId,
    driver: DriverId,
    price: Money,
    driver_fee: Money,
    taxes: Money,
    third_party: Money,
    terms: &GuaranteeTerms,
    driver_arrival: Tick,
    customer_arrival: Tick,
    completion: Tick,
) -> (GuaranteeAdjustments, Ledger) {
    let mut adj = GuaranteeAdjustments::default();

    if driver_arrival > terms.promised_arrival {
        adj.driver_late_seconds = driver_arrival.0 - terms.promised_arrival.0;
        adj.discount = apply_fraction(price, terms.discount_rate).expect("validated discount");
    }

    let customer_due = driver_arrival.plus(terms.customer_grace_seconds);
    if customer_arrival > customer_due {
        adj.customer_late_seconds = customer_arrival.0 - customer_due.0;
        adj.fulfillment_fee = terms.fulfillment_fee_for(adj.customer_late_seconds);
        adj.fulfillment_driver_share =
            apply_fraction(adj.fulfillment_fee, terms.fulfillment_driver_share)
                .expect("validated share");
    }

    if completion <= terms.incentive_deadline {
        adj.incentive = terms.incentive_fee;
    }

    let raw_driver_net =
        driver_fee - adj.discount + adj.fulfillment_driver_share + adj.incentive;
    let driver_net = raw_driver_net.max(Money::ZERO);
    adj.fee_clamped = raw_driver_net.is_negative();

    let mut ledger = Ledger::new();
    ledger.push(
        Party::Customer(customer),
        Direction::Inflow,
        price,
        Reason::RidePayment,
    );
    if adj.discount > Money::ZERO {
        ledger.push(
            Party::Customer(customer),
            Direction::Outflow,
            adj.discount,
            Reason::GuaranteeDiscount,
        );
    }
    if adj.fulfillment_fee > Money::ZERO {
        ledger.push(
            Party::Customer(customer),
            Direction::Inflow,
            adj.fulfillment_fee,
            Reason::FulfillmentFee,
        );
    }
    ledger.push(
        Party::Driver(driver),
        Direction::Outflow,
        driver_net,
        Reason::DriverFee,
    );
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
    // Retention is the signed residual; the platform absorbs clamp
    // shortfalls and funds incentives out of it.
    let retention =
        price + adj.fulfillment_fee - adj.discount - driver_net - taxes - third_party;
    ledger.push(
        Party::Platform,
        Direction::Outflow,
        retention,
        Reason::PlatformRetention,
    );
    debug_assert!(ledger.is_balanced());
    (adj, ledger)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevenueMismatch {
    UnderReporting,
    OverReporting,
    GhostRide,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RevenueCheck {
    Ok {
        estimated: Money,
    },
    Mismatch {
        estimated: Money,
        reported: Money,
        kind: RevenueMismatch,
    },
}

/// Compares sensor-estimated revenue (estimated distance per minute
/// times occupancy, priced at the meter rate) against app-reported
/// revenue for one vehicle period.
pub fn reconcile_revenue(
    occupancy_minutes: f64,
    rate: &MeterRate,
    estimated_km_per_minute: f64,
    reported: Money,
    tolerance: f64,
) -> RevenueCheck {
    if occupancy_minutes <= 0.0 {
        return if reported > Money::ZERO {
            RevenueCheck::Mismatch {
                estimated: Money::ZERO,
                reported,
                kind: RevenueMismatch::GhostRide,
            }
        } else {
            RevenueCheck::Ok {
                estimated: Money::ZERO,
            }
        };
    }
    let estimated = rate.fare(estimated_km_per_minute * occupancy_minutes, occupancy_minutes);
    let gap = (reported.minor() - estimated.minor()) as f64;
    if gap.abs() <= tolerance * estimated.minor().max(1) as f64 {
        RevenueCheck::Ok { estimated }
    } else {
        RevenueCheck::Mismatch {
            estimated,
            reported,
            kind: if gap < 0.0 {
                RevenueMismatch::UnderReporting
            } else {
                RevenueMismatch::OverReporting
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms() -> GuaranteeTerms {
        GuaranteeTerms {
            promised_arrival: Tick(600),
            discount_rate: 0.25,
            customer_grace_seconds: 600,
            fulfillment_fee_schedule: vec![(1, Money::from_minor(300)), (1800, Money::from_minor(600))],
            fulfillment_driver_share: 0.5,
            incentive_fee: Money::from_minor(100),
            incentive_deadline: Tick(3600),
        }
    }

    fn ids() -> (CustomerId, DriverId) {
        (CustomerId(1), DriverId(1))
    }

    #[test]
    fn late_driver_funds_discount() {
        let (c, d) = ids();
        let (adj, ledger) = apply_guarantees(
            c,
            d,
            Money::from_minor(1000),
            Money::from_minor(800),
            Money::ZERO,
            Money::ZERO,
            &terms(),
            Tick(720), // 2 minutes late
            Tick(720),
            Tick(5000), // past the incentive deadline
        );
        assert_eq!(adj.discount, Money::from_minor(250));
        assert_eq!(adj.incentive, Money::ZERO);
        assert!(ledger.is_balanced());
        // Customer effectively pays 750; driver nets 550.
        assert_eq!(ledger.net_for(Party::Customer(c)), Money::from_minor(-750));
        assert_eq!(ledger.net_for(Party::Driver(d)), Money::from_minor(550));
    }

    #[test]
    fn on_time_ride_untouched_except_incentive_window() {
        let (c, d) = ids();
        let mut t = terms();
        t.incentive_fee = Money::ZERO;
        let (adj, ledger) = apply_guarantees(
            c,
            d,
            Money::from_minor(1000),
            Money::from_minor(800),
            Money::from_minor(50),
            Money::ZERO,
            &t,
            Tick(500),
            Tick(600),
            Tick(2000),
        );
        assert_eq!(adj, GuaranteeAdjustments::default());
        assert_eq!(ledger.net_for(Party::Customer(c)), Money::from_minor(-1000));
        assert_eq!(ledger.net_for(Party::Driver(d)), Money::from_minor(800));
        assert!(ledger.is_balanced());
    }

    #[test]
    fn late_customer_fee_split_balances() {
        let (c, d) = ids();
        let (adj, ledger) = apply_guarantees(
            c,
            d,
            Money::from_minor(1000),
            Money::from_minor(800),
            Money::ZERO,
            Money::ZERO,
            &terms(),
            Tick(600),                 // on time
            Tick(600 + 600 + 600),     // 10 minutes beyond grace
            Tick(5000),
        );
        assert_eq!(adj.fulfillment_fee, Money::from_minor(300));
        assert_eq!(adj.fulfillment_driver_share, Money::from_minor(150));
        assert!(ledger.is_balanced());
        assert_eq!(ledger.net_for(Party::Customer(c)), Money::from_minor(-1300));
        assert_eq!(ledger.net_for(Party::Driver(d)), Money::from_minor(950));
        // Platform keeps price - fee + half the fulfillment fee.
        assert_eq!(ledger.net_for(Party::Platform), Money::from_minor(350));
    }

    #[test]
    fn incentive_is_platform_funded() {
        let (c, d) = ids();
        let (adj, ledger) = apply_guarantees(
            c,
            d,
            Money::from_minor(1000),
            Money::from_minor(800),
            Money::ZERO,
            Money::ZERO,
            &terms(),
            Tick(600),
            Tick(700),
            Tick(3000),
        );
        assert_eq!(adj.incentive, Money::from_minor(100));
        assert_eq!(ledger.net_for(Party::Driver(d)), Money::from_minor(900));
        assert_eq!(ledger.net_for(Party::Platform), Money::from_minor(100));
        assert!(ledger.is_balanced());
    }

    #[test]
    fn driver_fee_clamps_at_zero() {
        let (c, d) = ids();
        let (adj, ledger) = apply_guarantees(
            c,
            d,
            Money::from_minor(1000),
            Money::from_minor(100), // fee smaller than the 250 discount
            Money::ZERO,
            Money::ZERO,
            &terms(),
            Tick(9000),
            Tick(9000),
            Tick(20000),
        );
        assert!(adj.fee_clamped);
        assert_eq!(ledger.net_for(Party::Driver(d)), Money::ZERO);
        assert!(ledger.is_balanced());
    }

    #[test]
    fn schedule_steps_by_lateness() {
        let t = terms();
        assert_eq!(t.fulfillment_fee_for(0), Money::ZERO);
        assert_eq!(t.fulfillment_fee_for(10), Money::from_minor(300));
        assert_eq!(t.fulfillment_fee_for(1800), Money::from_minor(600));
        t.validate().unwrap();
    }

    #[test]
    fn reconcile_within_tolerance() {
        let rate = MeterRate {
            per_km: Money::from_minor(100),
            per_minute: Money::ZERO,
        };
        // 0.5 km/min * 20 min = 10 km -> estimate 1000.
        let check = reconcile_revenue(20.0, &rate, 0.5, Money::from_minor(980), 0.10);
        assert!(matches!(check, RevenueCheck::Ok { estimated } if estimated == Money::from_minor(1000)));
        let check = reconcile_revenue(20.0, &rate, 0.5, Money::from_minor(400), 0.10);
        assert!(matches!(
            check,
            RevenueCheck::Mismatch {
                kind: RevenueMismatch::UnderReporting,
                ..
            }
        ));
    }

    #[test]
    fn ghost_ride_flagged() {
        let rate = MeterRate {
            per_km: Money::from_minor(100),
            per_minute: Money::ZERO,
        };
        let check = reconcile_revenue(0.0, &rate, 0.5, Money::from_minor(500), 0.10);
        assert!(matches!(
            check,
            RevenueCheck::Mismatch {
                kind: RevenueMismatch::GhostRide,
                ..
            }
        ));
    }
}
