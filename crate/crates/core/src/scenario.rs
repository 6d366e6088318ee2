//! Scenario files: the structured-text configuration a run consumes.
//! Everything a run does is a deterministic function of one scenario
//! plus one seed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::minutes;
use crate::money::Money;
use crate::params::{MechanismType, MeterRate, ParamsError, PlatformEconomics, PricingParams};
use crate::payoffs::ProbCombinator;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported format_version {0} (expected {SCENARIO_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub seed: u64,
    pub duration_minutes: u64,
    pub grid: GridConfig,
    pub fleet: FleetConfig,
    pub demand: DemandConfig,
    pub pricing: PricingConfig,
    #[serde(default)]
    pub economics: EconomicsConfig,
    #[serde(default)]
    pub guarantees: GuaranteeConfig,
    #[serde(default)]
    pub integrity: IntegrityConfig,
    #[serde(default)]
    pub learning: LearningConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width_km: f64,
    pub height_km: f64,
    pub neighborhoods_x: u32,
    pub neighborhoods_y: u32,
    /// Anchor of the km plane, for GPS coordinates.
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl GridConfig {
    pub fn neighborhood_of(&self, position: (f64, f64)) -> u32 {
        let nx = ((position.0 / self.width_km) * self.neighborhoods_x as f64)
            .floor()
            .clamp(0.0, self.neighborhoods_x as f64 - 1.0) as u32;
        let ny = ((position.1 / self.height_km) * self.neighborhoods_y as f64)
            .floor()
            .clamp(0.0, self.neighborhoods_y as f64 - 1.0) as u32;
        ny * self.neighborhoods_x + nx
    }

    /// Converts a km-plane position to GPS coordinates around the anchor.
    pub fn to_lat_lon(&self, position: (f64, f64)) -> (f64, f64) {
        const KM_PER_DEG: f64 = 111.194_926_644_558_74;
        let lat = self.origin_lat + position.1 / KM_PER_DEG;
        let lon = self.origin_lon + position.0 / (KM_PER_DEG * self.origin_lat.to_radians().cos());
        (lat, lon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub drivers: u32,
    pub speed_kmh: Range,
    pub quality: Range,
    /// Per-ride variable cost, minor units.
    pub cost_variable: MoneyRange,
    /// Per-ride allocated fixed cost, minor units.
    pub cost_fixed: MoneyRange,
    /// Manual-bid markup, minor units.
    pub margin: MoneyRange,
    #[serde(default = "default_preset_fraction")]
    pub preset_fraction: Range,
    #[serde(default = "default_auto_weight")]
    pub auto_weight: f64,
    #[serde(default = "default_no_bid_weight")]
    pub no_bid_weight: f64,
    /// Expected off-duty breaks per driver per simulated day.
    #[serde(default)]
    pub off_duty_per_day: f64,
    #[serde(default = "default_off_duty_minutes")]
    pub off_duty_minutes: u64,
    /// Log-std of the travel-time factor applied to ETAs and rides.
    #[serde(default = "default_traffic_sigma")]
    pub traffic_sigma: f64,
    /// Seconds of slack a driver adds to the ETA they promise.
    #[serde(default = "default_promise_buffer")]
    pub promise_buffer_seconds: u64,
}

fn default_preset_fraction() -> Range {
    Range { min: 0.75, max: 0.95 }
}
fn default_auto_weight() -> f64 {
    0.35
}
fn default_no_bid_weight() -> f64 {
    0.05
}
fn default_off_duty_minutes() -> u64 {
    45
}
fn default_traffic_sigma() -> f64 {
    0.12
}
fn default_promise_buffer() -> u64 {
    120
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoneyRange {
    pub min: i64,
    pub max: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub arrivals_per_minute: f64,
    /// Valuation = metered fare times a log-normal factor.
    #[serde(default = "default_valuation_mu")]
    pub valuation_factor_mu: f64,
    #[serde(default = "default_valuation_sigma")]
    pub valuation_factor_sigma: f64,
    /// Probability a customer opens a sibling auction within 100 m.
    #[serde(default)]
    pub sibling_probability: f64,
    /// Probability the customer shows up late past the grace period.
    #[serde(default = "default_late_probability")]
    pub customer_late_probability: f64,
    #[serde(default = "default_late_max")]
    pub customer_late_max_minutes: u64,
}

fn default_valuation_mu() -> f64 {
    0.18
}
fn default_valuation_sigma() -> f64 {
    0.35
}
fn default_late_probability() -> f64 {
    0.05
}
fn default_late_max() -> u64 {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingConfig {
    /// Relative weights over mechanism types for arriving customers.
    pub mechanism_mix: BTreeMap<MechanismType, f64>,
    #[serde(default = "default_meter_per_km")]
    pub meter_per_km: i64,
    #[serde(default = "default_meter_per_minute")]
    pub meter_per_minute: i64,
    #[serde(default = "default_cap_factor")]
    pub standard_cap_factor: f64,
    #[serde(default = "default_flex_band")]
    pub flex_band: f64,
    #[serde(default = "default_payout")]
    pub payout_fraction: f64,
    #[serde(default = "default_blackcar")]
    pub blackcar_payout_fraction: f64,
    #[serde(default = "default_min_selected")]
    pub min_selected: usize,
    #[serde(default = "default_max_selected")]
    pub max_selected: usize,
    #[serde(default = "default_bid_window")]
    pub bid_window_seconds: u64,
    #[serde(default = "default_revision_window")]
    pub revision_window_seconds: u64,
    #[serde(default = "default_no_bid_fee")]
    pub no_bid_fee: i64,
    /// The T1 protocol leaves the fee optional; off unless enabled.
    #[serde(default)]
    pub charge_no_bid_fee_t1: bool,
}

fn default_meter_per_km() -> i64 {
    120
}
fn default_meter_per_minute() -> i64 {
    30
}
fn default_cap_factor() -> f64 {
    0.80
}
fn default_flex_band() -> f64 {
    0.20
}
fn default_payout() -> f64 {
    0.80
}
fn default_blackcar() -> f64 {
    0.85
}
fn default_min_selected() -> usize {
    3
}
fn default_max_selected() -> usize {
    15
}
fn default_bid_window() -> u64 {
    180
}
fn default_revision_window() -> u64 {
    600
}
fn default_no_bid_fee() -> i64 {
    50
}

impl PricingConfig {
    pub fn params_for(&self, mechanism: MechanismType) -> PricingParams {
        let mut params = PricingParams::defaults(mechanism);
        params.meter_rate = MeterRate {
            per_km: Money::from_minor(self.meter_per_km),
            per_minute: Money::from_minor(self.meter_per_minute),
        };
        params.standard_cap_factor = self.standard_cap_factor;
        params.flex_band = self.flex_band;
        params.payout_fraction = self.payout_fraction;
        params.blackcar_payout_fraction = self.blackcar_payout_fraction;
        params.min_selected = self.min_selected;
        params.max_selected = self.max_selected;
        params.bid_window = self.bid_window_seconds;
        params.revision_window = self.revision_window_seconds;
        params.no_bid_fee = Money::from_minor(self.no_bid_fee);
        if mechanism == MechanismType::T1 {
            params.charge_no_bid_fee = self.charge_no_bid_fee_t1;
        }
        params
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconomicsConfig {
    pub beta_v: i64,
    pub beta_f: i64,
    pub psi_ob: i64,
    pub beta_ob: f64,
    pub beta_lb: f64,
    pub beta_id: f64,
    pub taxes_rate: f64,
    pub third_party_fee: i64,
    pub brand_subsidy: i64,
    pub combinator: CombinatorConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinatorConfig {
    #[default]
    Product,
    Min,
    Left,
}

impl From<CombinatorConfig> for ProbCombinator {
    fn from(value: CombinatorConfig) -> Self {
        match value {
            CombinatorConfig::Product => ProbCombinator::Product,
            CombinatorConfig::Min => ProbCombinator::Min,
            CombinatorConfig::Left => ProbCombinator::Left,
        }
    }
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        EconomicsConfig {
            beta_v: 60,
            beta_f: 40,
            psi_ob: 0,
            beta_ob: 0.0,
            beta_lb: 0.0,
            beta_id: 1.0,
            taxes_rate: 0.05,
            third_party_fee: 0,
            brand_subsidy: 0,
            combinator: CombinatorConfig::Product,
        }
    }
}

impl EconomicsConfig {
    pub fn platform_economics(&self) -> Result<PlatformEconomics, ScenarioError> {
        let prob = |v: f64, name: &str| {
            crate::money::Probability::new(v)
                .ok_or_else(|| ScenarioError::Invalid(format!("{name} {v} outside [0, 1]")))
        };
        let econ = PlatformEconomics {
            beta_v: Money::from_minor(self.beta_v),
            beta_f: Money::from_minor(self.beta_f),
            psi_ob: Money::from_minor(self.psi_ob),
            beta_ob: prob(self.beta_ob, "beta_ob")?,
            beta_lb: prob(self.beta_lb, "beta_lb")?,
            beta_id: prob(self.beta_id, "beta_id")?,
            taxes_rate: self.taxes_rate,
            third_party_fee: Money::from_minor(self.third_party_fee),
            brand_subsidy: Money::from_minor(self.brand_subsidy),
        };
        if !econ.validate() {
            return Err(ScenarioError::Invalid(
                "economics: costs must be non-negative and taxes_rate in [0, 1)".into(),
            ));
        }
        Ok(econ)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuaranteeConfig {
    pub enabled: bool,
    pub discount_rate: f64,
    pub customer_grace_minutes: u64,
    /// `(seconds beyond grace, fee minor units)` steps.
    pub fulfillment_fee_schedule: Vec<(u64, i64)>,
    pub fulfillment_driver_share: f64,
    pub incentive_fee: i64,
    /// Completion deadline as a multiple of the expected ride span.
    pub incentive_slack: f64,
}

impl Default for GuaranteeConfig {
    fn default() -> Self {
        GuaranteeConfig {
            enabled: true,
            discount_rate: 0.25,
            customer_grace_minutes: 10,
            fulfillment_fee_schedule: vec![(1, 300), (1800, 600)],
            fulfillment_driver_share: 0.5,
            incentive_fee: 50,
            incentive_slack: 1.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrityConfig {
    pub collusion_band: f64,
    pub collusion_min_customers: usize,
    pub collusion_window_hours: u64,
    pub logoff_delta_seconds: u64,
    pub logoff_min_occasions: usize,
    pub gps_tolerance: f64,
    pub revenue_tolerance: f64,
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        IntegrityConfig {
            collusion_band: 0.10,
            collusion_min_customers: 5,
            collusion_window_hours: 24,
            logoff_delta_seconds: 120,
            logoff_min_occasions: 3,
            gps_tolerance: 0.15,
            revenue_tolerance: 0.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub lambda: f64,
    /// Completed-auction observations buffered before a belief update.
    pub belief_window: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            lambda: 0.2,
            belief_window: 5,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(ScenarioError::FormatVersion(self.format_version));
        }
        let invalid = |msg: &str| Err(ScenarioError::Invalid(msg.to_string()));
        if self.duration_minutes == 0 {
            return invalid("duration_minutes must be positive");
        }
        if self.grid.width_km <= 0.0 || self.grid.height_km <= 0.0 {
            return invalid("grid dimensions must be positive");
        }
        if self.grid.neighborhoods_x == 0 || self.grid.neighborhoods_y == 0 {
            return invalid("neighborhood counts must be positive");
        }
        if self.fleet.drivers == 0 {
            return invalid("fleet.drivers must be positive");
        }
        if self.fleet.speed_kmh.min <= 0.0 || self.fleet.speed_kmh.max < self.fleet.speed_kmh.min {
            return invalid("fleet.speed_kmh range is invalid");
        }
        if self.demand.arrivals_per_minute <= 0.0 {
            return invalid("demand.arrivals_per_minute must be positive");
        }
        if self.pricing.mechanism_mix.is_empty()
            || self.pricing.mechanism_mix.values().any(|w| *w < 0.0)
            || self.pricing.mechanism_mix.values().sum::<f64>() <= 0.0
        {
            return invalid("pricing.mechanism_mix must carry positive weight");
        }
        for mechanism in self.pricing.mechanism_mix.keys() {
            self.pricing.params_for(*mechanism).validate()?;
        }
        self.economics.platform_economics()?;
        if self.guarantees.enabled {
            self.guarantee_terms_template().validate().map_err(|e| {
                ScenarioError::Invalid(format!("guarantees: {e}"))
            })?;
        }
        Ok(())
    }

    /// Guarantee terms with placeholder deadlines; the engine fills the
    /// per-ride promised arrival and incentive deadline at assignment.
    pub fn guarantee_terms_template(&self) -> crate::integrity::GuaranteeTerms {
        crate::integrity::GuaranteeTerms {
            promised_arrival: crate::ids::Tick(0),
            discount_rate: self.guarantees.discount_rate,
            customer_grace_seconds: minutes(self.guarantees.customer_grace_minutes),
            fulfillment_fee_schedule: self
                .guarantees
                .fulfillment_fee_schedule
                .iter()
                .map(|(secs, fee)| (*secs, Money::from_minor(*fee)))
                .collect(),
            fulfillment_driver_share: self.guarantees.fulfillment_driver_share,
            incentive_fee: Money::from_minor(self.guarantees.incentive_fee),
            incentive_deadline: crate::ids::Tick(0),
        }
    }

    /// FNV-1a digest of the serialized scenario, naming the run inputs.
    pub fn digest(&self) -> String {
        let text = self.to_toml();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// A compact scenario suitable for tests and examples.
pub fn example_scenario(mechanism: MechanismType, seed: u64) -> Scenario {
    let mut mix = BTreeMap::new();
    mix.insert(mechanism, 1.0);
    Scenario {
        format_version: SCENARIO_FORMAT_VERSION,
        seed,
        duration_minutes: 60,
        grid: GridConfig {
            width_km: 8.0,
            height_km: 8.0,
            neighborhoods_x: 4,
            neighborhoods_y: 4,
            origin_lat: 40.7,
            origin_lon: -74.0,
        },
        fleet: FleetConfig {
            drivers: 30,
            speed_kmh: Range { min: 24.0, max: 42.0 },
            quality: Range { min: 0.3, max: 1.0 },
            cost_variable: MoneyRange { min: 150, max: 350 },
            cost_fixed: MoneyRange { min: 80, max: 200 },
            margin: MoneyRange { min: 40, max: 220 },
            preset_fraction: default_preset_fraction(),
            auto_weight: default_auto_weight(),
            no_bid_weight: default_no_bid_weight(),
            off_duty_per_day: 2.0,
            off_duty_minutes: default_off_duty_minutes(),
            traffic_sigma: default_traffic_sigma(),
            promise_buffer_seconds: default_promise_buffer(),
        },
        demand: DemandConfig {
            arrivals_per_minute: 1.0,
            valuation_factor_mu: default_valuation_mu(),
            valuation_factor_sigma: default_valuation_sigma(),
            sibling_probability: 0.05,
            customer_late_probability: default_late_probability(),
            customer_late_max_minutes: default_late_max(),
        },
        pricing: PricingConfig {
            mechanism_mix: mix,
            meter_per_km: default_meter_per_km(),
            meter_per_minute: default_meter_per_minute(),
            standard_cap_factor: default_cap_factor(),
            flex_band: default_flex_band(),
            payout_fraction: default_payout(),
            blackcar_payout_fraction: default_blackcar(),
            min_selected: default_min_selected(),
            max_selected: default_max_selected(),
            bid_window_seconds: default_bid_window(),
            revision_window_seconds: default_revision_window(),
            no_bid_fee: default_no_bid_fee(),
            charge_no_bid_fee_t1: false,
        },
        economics: EconomicsConfig::default(),
        guarantees: GuaranteeConfig::default(),
        integrity: IntegrityConfig::default(),
        learning: LearningConfig::default(),
    }
}
