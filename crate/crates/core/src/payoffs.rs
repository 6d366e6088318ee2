//! Clearing prices, platform/driver payoffs, the driver fee split, and
//! surplus/deadweight-loss/regret metrics.
//!
//! Clearing arithmetic is exact integer money. Expected payoffs are
//! analytics: they mix probabilities in `f64` and round to money once,
//! at the end. The settlement ledger never sees a probability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{apply_fraction, fraction_to_scaled, Money, Probability};
use crate::params::{MechanismType, PlatformEconomics, PricingParams};

/// Driver-side economics for a ride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverEconomics {
    /// Variable cost per ride.
    pub d_v: Money,
    /// Allocated fixed cost per ride.
    pub d_f: Money,
    /// Opportunity net profit from serving another customer instead.
    pub psi_od: Money,
    /// Probability of winning and servicing that other customer.
    pub beta_od: Probability,
    /// Probability that a larger-fare customer exists.
    pub beta_ld: Probability,
    /// Probability that at least one driver bids.
    pub beta_id: Probability,
    /// Probability that this driver's bid wins.
    pub beta_idw: Probability,
}

impl DriverEconomics {
    pub fn validate(&self) -> bool {
        !self.d_v.is_negative() && !self.d_f.is_negative() && !self.psi_od.is_negative()
    }

    /// Cost floor below which serving a ride cannot be profitable.
    pub fn total_cost(&self) -> Money {
        self.d_v + self.d_f
    }
}

impl Default for DriverEconomics {
    fn default() -> Self {
        DriverEconomics {
            d_v: Money::from_minor(300),
            d_f: Money::from_minor(150),
            psi_od: Money::ZERO,
            beta_od: Probability::ZERO,
            beta_ld: Probability::ZERO,
            beta_id: Probability::ONE,
            beta_idw: Probability::ONE,
        }
    }
}

/// How two conditioned probabilities combine into one weight. The
/// payoff definitions pair probabilities without fixing an operational
/// reading, so the combination is pluggable: product is the default,
/// the alternates exist for sensitivity runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbCombinator {
    #[default]
    Product,
    Min,
    Left,
}

impl ProbCombinator {
    pub fn combine(self, a: Probability, b: Probability) -> f64 {
        match self {
            ProbCombinator::Product => a.value() * b.value(),
            ProbCombinator::Min => a.value().min(b.value()),
            ProbCombinator::Left => a.value(),
        }
    }
}

/// Which branch of the clearing expression produced the price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClearingBranch {
    /// T1/T4 feasible branch: the customer cap covers the winning bid.
    Feasible,
    /// T1/T4 cap below the bid/base floor: no trade; the price carried
    /// here is the formula value, reported as a diagnostic only.
    Infeasible,
    /// Types without a cap branch (T2, T3, T5).
    Single,
}

/// Result of evaluating one ride's payoff formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffResult {
    pub clearing_price: Money,
    pub platform_payoff: Money,
    pub driver_payoff: Money,
    pub driver_fee: Money,
    pub feasible_trade: bool,
    pub branch: ClearingBranch,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayoffError {
    #[error("infeasible fee: taxes and third-party fees exceed gross {gross}")]
    InfeasibleFee { gross: Money },
}

/// Canonical clearing-price parse, one expression per mechanism type.
///
/// `cap` is the customer-side bound: the range top for T1, the flex bid
/// for T4, the priority price for T3/T5; it is ignored for T2, whose
/// ceiling is the (possibly revised) standard price.
pub fn clearing_price(
    mechanism: MechanismType,
    cap: Money,
    winning_bid: Money,
    base: Money,
    standard: Money,
) -> (Money, ClearingBranch) {
    let zero_floor = Money::ZERO.max(winning_bid).max(base);
    match mechanism {
        MechanismType::T1 | MechanismType::T4 => {
            if cap >= winning_bid.max(base) {
                (zero_floor.min(cap), ClearingBranch::Feasible)
            } else {
                (zero_floor, ClearingBranch::Infeasible)
            }
        }
        MechanismType::T2 => (standard.min(zero_floor), ClearingBranch::Single),
        MechanismType::T3 | MechanismType::T5 => {
            (cap.min(zero_floor.max(standard)), ClearingBranch::Single)
        }
    }
}

/// Expected platform payoff before the final rounding to money: the
/// in-ride margin weighted by the probability that anyone bids, less
/// the probability-weighted opportunity profit, floored at zero.
pub fn platform_payoff_expected(
    clearing: Money,
    driver_fee: Money,
    econ: &PlatformEconomics,
    combinator: ProbCombinator,
) -> f64 {
    let margin = (clearing - driver_fee - econ.beta_f - econ.beta_v).as_f64();
    let opportunity = combinator.combine(econ.beta_ob, econ.beta_lb) * econ.psi_ob.as_f64();
    (econ.beta_id.value() * margin - opportunity).max(0.0)
}

/// [`platform_payoff_expected`] rounded half-up to minor units.
pub fn platform_payoff(
    clearing: Money,
    driver_fee: Money,
    econ: &PlatformEconomics,
    combinator: ProbCombinator,
) -> Money {
    Money::from_f64_half_up(platform_payoff_expected(clearing, driver_fee, econ, combinator))
}

/// Expected driver payoff before the final rounding: fee net of own
/// costs and the probability-weighted opportunity profit, weighted by
/// the combined bid/win probability, floored at zero. A zero fee (no
/// winning bid) yields zero.
pub fn driver_payoff_expected(
    driver_fee: Money,
    driver: &DriverEconomics,
    combinator: ProbCombinator,
) -> f64 {
    if driver_fee <= Money::ZERO {
        return 0.0;
    }
    let opportunity =
        combinator.combine(driver.beta_od, driver.beta_ld) * driver.psi_od.as_f64();
    let inner = (driver_fee - driver.d_v - driver.d_f).as_f64() - opportunity;
    (combinator.combine(driver.beta_id, driver.beta_idw) * inner).max(0.0)
}

/// [`driver_payoff_expected`] rounded half-up to minor units.
pub fn driver_payoff(
    driver_fee: Money,
    driver: &DriverEconomics,
    combinator: ProbCombinator,
) -> Money {
    Money::from_f64_half_up(driver_payoff_expected(driver_fee, driver, combinator))
}

/// Driver fee for a settled ride: the lesser of the black-car payout
/// share and the platform payout share, both applied to the fare net of
/// taxes and third-party fees.
pub fn compute_driver_fee(
    gross: Money,
    taxes: Money,
    third_party: Money,
    params: &PricingParams,
) -> Result<Money, PayoffError> {
    let net = gross - taxes - third_party;
    if net.is_negative() {
        return Err(PayoffError::InfeasibleFee { gross });
    }
    let blackcar = apply_fraction(net, params.blackcar_payout_fraction)
        .expect("validated blackcar fraction");
    let payout =
        apply_fraction(net, params.payout_fraction).expect("validated payout fraction");
    Ok(blackcar.min(payout))
}

/// Base price: the smallest price at which the ride is profitable for
/// the platform after the driver fee, taxes, third-party fees and the
/// platform's own per-ride costs, less any brand subsidy, floored at 0.
///
/// The break-even comparison uses exact rational arithmetic on the
/// un-rounded fee, so the result is the true linear break-even point
/// rather than an artifact of per-cent rounding.
pub fn compute_base_price(
    econ: &PlatformEconomics,
    expected_fee_split: f64,
    brand_subsidy: Money,
) -> Money {
    const SCALE: i128 = 1_000_000_000;
    let fee = fraction_to_scaled(expected_fee_split.clamp(0.0, 1.0))
        .unwrap_or(SCALE)
        .min(SCALE - 1);
    let tax = fraction_to_scaled(econ.taxes_rate.clamp(0.0, 1.0))
        .unwrap_or(0)
        .min(SCALE - 1);
    let costs = (econ.beta_f + econ.beta_v).minor().max(0) as i128;
    let third_party = econ.third_party_fee.minor().max(0) as i128;

    // Retention(p) = (1 - fee) * ((1 - tax) * p - third_party); solve the
    // smallest integer p with Retention(p) >= costs.
    let keep = SCALE - fee;
    let after_tax = SCALE - tax;
    let numerator = ceil_div(costs * SCALE * SCALE, keep) + SCALE * third_party;
    let break_even = ceil_div(numerator, after_tax);
    let price = i64::try_from(break_even).unwrap_or(i64::MAX);
    (Money::from_minor(price) - brand_subsidy).max(Money::ZERO)
}

fn ceil_div(a: i128, b: i128) -> i128 {
    debug_assert!(b > 0);
    if a <= 0 {
        // Negative numerators only arise from zero costs; floor at 0.
        0
    } else {
        (a + b - 1) / b
    }
}

/// One demand draw as seen by the welfare metrics: what the customer was
/// worth, what (if anything) they paid, and the cheapest feasible way
/// the market could have served them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeView {
    pub valuation: Money,
    /// Payment and the serving driver's fee/costs when the trade executed.
    pub executed: Option<ExecutedTrade>,
    /// Minimum total cost (driver variable+fixed plus platform
    /// variable+fixed) over the drivers that could have served the ride,
    /// when any existed.
    pub cheapest_total_cost: Option<Money>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedTrade {
    pub payment: Money,
    pub driver_fee: Money,
    pub driver_cost: Money,
}

/// All demand draws of one run under one pricing regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketRecord {
    pub seed: u64,
    pub trades: Vec<TradeView>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurplusMetrics {
    pub consumer_surplus: Money,
    pub producer_surplus: Money,
    pub deadweight_loss: Money,
    pub executed_trades: u64,
    pub missed_feasible_trades: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwlComparison {
    pub mechanism: SurplusMetrics,
    pub baseline: SurplusMetrics,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("incomparable baseline: mechanism seed {mechanism} vs baseline seed {baseline}")]
    IncomparableBaseline { mechanism: u64, baseline: u64 },
}

/// Consumer surplus, producer surplus and deadweight loss over one run.
/// A trade is feasible when the valuation exceeds the cheapest total
/// cost of serving it; every feasible trade that failed to execute
/// contributes its forgone surplus to the deadweight loss.
pub fn surplus_metrics(record: &MarketRecord) -> SurplusMetrics {
    let mut metrics = SurplusMetrics::default();
    for trade in &record.trades {
        match &trade.executed {
            Some(exec) => {
                metrics.executed_trades += 1;
                metrics.consumer_surplus += trade.valuation - exec.payment;
                metrics.producer_surplus += exec.driver_fee - exec.driver_cost;
            }
            None => {
                if let Some(cost) = trade.cheapest_total_cost {
                    if trade.valuation > cost {
                        metrics.deadweight_loss += trade.valuation - cost;
                        metrics.missed_feasible_trades += 1;
                    }
                }
            }
        }
    }
    metrics
}

/// Mechanism-vs-baseline welfare comparison; both records must come from
/// identical demand/supply draws (same seed).
pub fn surplus_and_dwl(
    mechanism: &MarketRecord,
    baseline: &MarketRecord,
) -> Result<DwlComparison, MetricsError> {
    if mechanism.seed != baseline.seed {
        return Err(MetricsError::IncomparableBaseline {
            mechanism: mechanism.seed,
            baseline: baseline.seed,
        });
    }
    Ok(DwlComparison {
        mechanism: surplus_metrics(mechanism),
        baseline: surplus_metrics(baseline),
    })
}

/// Realized regret: how much better the best concurrent opportunity
/// would have paid, floored at zero.
pub fn driver_regret(realized_payoff: Money, concurrent_payoffs: &[Money]) -> Money {
    let best = concurrent_payoffs
        .iter()
        .copied()
        .max()
        .unwrap_or(Money::ZERO);
    (best - realized_payoff).max(Money::ZERO)
}
