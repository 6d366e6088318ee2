//! Mechanism configuration: pricing parameters and platform economics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::minutes;
use crate::money::{Money, Probability};

/// The five auction protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MechanismType {
    /// Customer-range auction: customer posts a min/max price range,
    /// drivers bid above the base price, lowest bid wins.
    T1,
    /// Capped-standard auction: platform posts a standard price capped at
    /// 70-85% of the meter rate, drivers bid between base and standard.
    T2,
    /// Priority auction (ceiling): customer posts a priority price above
    /// the standard price, drivers bid between base and priority.
    T3,
    /// Flex auction: customer bids inside a +/-20% band around the
    /// standard price, drivers bid inside the band above base.
    T4,
    /// Priority auction (floor): customer posts the lowest price they are
    /// willing to pay; the highest driver bid below it wins.
    T5,
}

impl MechanismType {
    pub const ALL: [MechanismType; 5] = [
        MechanismType::T1,
        MechanismType::T2,
        MechanismType::T3,
        MechanismType::T4,
        MechanismType::T5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MechanismType::T1 => "T1",
            MechanismType::T2 => "T2",
            MechanismType::T3 => "T3",
            MechanismType::T4 => "T4",
            MechanismType::T5 => "T5",
        }
    }
}

/// Meter rate used to derive the standard price from a route estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterRate {
    pub per_km: Money,
    pub per_minute: Money,
}

impl MeterRate {
    /// Metered fare for a route, rounded half-up per component product.
    pub fn fare(&self, distance_km: f64, duration_minutes: f64) -> Money {
        let km_part = self.per_km.as_f64() * distance_km;
        let min_part = self.per_minute.as_f64() * duration_minutes;
        Money::from_f64_half_up(km_part + min_part)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("standard_cap_factor {0} outside [0.70, 0.85]")]
    CapFactor(f64),
    #[error("guarantee_discount {0} outside [0.15, 0.35]")]
    GuaranteeDiscount(f64),
    #[error("payout_fraction {0} outside [0.75, 0.90]")]
    PayoutFraction(f64),
    #[error("selection bounds invalid: min {min}, max {max} (must satisfy 3 <= min <= max <= 15)")]
    SelectionBounds { min: usize, max: usize },
    #[error("flex_band {0} must be positive and below 1")]
    FlexBand(f64),
    #[error("no_bid_fee must be non-negative")]
    NoBidFee,
}

/// Per-mechanism pricing configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingParams {
    pub mechanism: MechanismType,
    pub meter_rate: MeterRate,
    /// Fraction of the metered fare used as the standard price (T2 only).
    pub standard_cap_factor: f64,
    /// Half-width of the flex band around the standard price (T4).
    pub flex_band: f64,
    /// Platform-to-driver payout share of net customer fees.
    pub payout_fraction: f64,
    /// Local black-car payout share; the driver fee takes the lesser.
    pub blackcar_payout_fraction: f64,
    /// Arrival-guarantee discount rate charged against a late driver.
    pub guarantee_discount: f64,
    pub min_selected: usize,
    pub max_selected: usize,
    /// Lockout window around a winning bid, in seconds.
    pub lockout_before: u64,
    pub lockout_after: u64,
    /// Bidding and customer-revision windows, in seconds.
    pub bid_window: u64,
    pub revision_window: u64,
    pub no_bid_fee: Money,
    /// Whether selected drivers that never bid are charged the fee.
    /// Mandatory for T2-T5; off by default for T1.
    pub charge_no_bid_fee: bool,
}

impl PricingParams {
    /// Defaults per mechanism: 60-minute lockouts both sides for T1,
    /// 30 minutes otherwise (no before-lockout for T5).
    pub fn defaults(mechanism: MechanismType) -> Self {
        let (before, after) = match mechanism {
            MechanismType::T1 => (minutes(60), minutes(60)),
            MechanismType::T5 => (0, minutes(30)),
            _ => (minutes(30), minutes(30)),
        };
        PricingParams {
            mechanism,
            meter_rate: MeterRate {
                per_km: Money::from_minor(120),
                per_minute: Money::from_minor(30),
            },
            standard_cap_factor: 0.80,
            flex_band: 0.20,
            payout_fraction: 0.80,
            blackcar_payout_fraction: 0.85,
            guarantee_discount: 0.25,
            min_selected: 3,
            max_selected: 15,
            lockout_before: before,
            lockout_after: after,
            bid_window: minutes(3),
            revision_window: minutes(10),
            no_bid_fee: Money::from_minor(50),
            charge_no_bid_fee: mechanism != MechanismType::T1,
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(0.70..=0.85).contains(&self.standard_cap_factor) {
            return Err(ParamsError::CapFactor(self.standard_cap_factor));
        }
        if !(0.15..=0.35).contains(&self.guarantee_discount) {
            return Err(ParamsError::GuaranteeDiscount(self.guarantee_discount));
        }
        if !(0.75..=0.90).contains(&self.payout_fraction) {
            return Err(ParamsError::PayoutFraction(self.payout_fraction));
        }
        if self.min_selected < 3 || self.min_selected > self.max_selected || self.max_selected > 15
        {
            return Err(ParamsError::SelectionBounds {
                min: self.min_selected,
                max: self.max_selected,
            });
        }
        if !(0.0..1.0).contains(&self.flex_band) || self.flex_band == 0.0 {
            return Err(ParamsError::FlexBand(self.flex_band));
        }
        if self.no_bid_fee.is_negative() {
            return Err(ParamsError::NoBidFee);
        }
        Ok(())
    }

    /// Effective fee split: the lesser of the black-car share and the
    /// platform payout share (both are linear in the net fare).
    pub fn fee_split(&self) -> f64 {
        self.payout_fraction.min(self.blackcar_payout_fraction)
    }
}

/// Platform-side economics for a ride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformEconomics {
    /// Variable cost per ride.
    pub beta_v: Money,
    /// Allocated fixed cost per ride.
    pub beta_f: Money,
    /// Opportunity net profit from serving a different customer instead.
    pub psi_ob: Money,
    /// Probability of winning and servicing that other customer.
    pub beta_ob: Probability,
    /// Probability that a larger-fare customer exists.
    pub beta_lb: Probability,
    /// Probability that at least one driver bids for a ride.
    pub beta_id: Probability,
    pub taxes_rate: f64,
    pub third_party_fee: Money,
    /// Deliberate per-ride loss absorbed for brand building; lowers the
    /// base price.
    pub brand_subsidy: Money,
}

impl PlatformEconomics {
    pub fn validate(&self) -> bool {
        !self.beta_v.is_negative()
            && !self.beta_f.is_negative()
            && !self.brand_subsidy.is_negative()
            && (0.0..1.0).contains(&self.taxes_rate)
            && !self.third_party_fee.is_negative()
    }
}

impl Default for PlatformEconomics {
    fn default() -> Self {
        PlatformEconomics {
            beta_v: Money::from_minor(60),
            beta_f: Money::from_minor(40),
            psi_ob: Money::ZERO,
            beta_ob: Probability::ZERO,
            beta_lb: Probability::ZERO,
            beta_id: Probability::ONE,
            taxes_rate: 0.0,
            third_party_fee: Money::ZERO,
            brand_subsidy: Money::ZERO,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for mech in MechanismType::ALL {
            PricingParams::defaults(mech).validate().unwrap();
        }
    }

    #[test]
    fn cap_factor_bounds() {
        let mut p = PricingParams::defaults(MechanismType::T2);
        p.standard_cap_factor = 0.60;
        assert_eq!(p.validate(), Err(ParamsError::CapFactor(0.60)));
    }

    #[test]
    fn selection_bounds() {
        let mut p = PricingParams::defaults(MechanismType::T1);
        p.max_selected = 20;
        assert!(matches!(
            p.validate(),
            Err(ParamsError::SelectionBounds { .. })
        ));
    }

    #[test]
    fn meter_fare_rounds() {
        let rate = MeterRate {
            per_km: Money::from_minor(100),
            per_minute: Money::from_minor(25),
        };
        // 100 * 3.335 + 25 * 2 = 333.5 + 50 = 383.5 -> 384
        assert_eq!(rate.fare(3.335, 2.0), Money::from_minor(384));
    }
}
