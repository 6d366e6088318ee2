//! Run reports: schema-versioned structured output with stable field
//! ordering, plus the comma-separated metrics table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;
use crate::payoffs::surplus_metrics;
use crate::scenario::Scenario;
use crate::sim::{audit_privacy, RunOutput};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub auctions: u64,
    pub settled: u64,
    pub failed: u64,
    pub thin_markets: u64,
    pub clearing_total: Money,
    pub consumer_surplus: Money,
    pub producer_surplus: Money,
    pub regret_total: Money,
    pub guarantee_discounts: Money,
    pub fulfillment_fees: Money,
    pub incentive_fees: Money,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegritySummary {
    pub collusion_groups: u64,
    pub sync_logoff_pairs: u64,
    pub gps_flags: u64,
    pub revenue_mismatches: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub inflows: Money,
    pub outflows: Money,
    pub customer_payments: Money,
    pub driver_fees: Money,
    pub taxes: Money,
    pub third_party: Money,
    pub platform_retention: Money,
    pub no_bid_fees: Money,
    pub balanced: bool,
}

/// The structured run report written by the `run` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub scenario_digest: String,
    pub seed: u64,
    pub events: u64,
    pub declined_requests: u64,
    pub deadweight_loss: Money,
    pub missed_feasible_trades: u64,
    pub no_bid_fee_count: u64,
    pub privacy_violations: u64,
    pub per_type: BTreeMap<String, TypeMetrics>,
    pub integrity: IntegritySummary,
    pub ledger: LedgerTotals,
}

impl RunReport {
    pub fn build(scenario: &Scenario, output: &RunOutput) -> RunReport {
        let mut per_type: BTreeMap<String, TypeMetrics> = BTreeMap::new();
        for mechanism in scenario.pricing.mechanism_mix.keys() {
            per_type.insert(mechanism.label().to_string(), TypeMetrics::default());
        }
        for outcome in &output.outcomes {
            let entry = per_type
                .entry(outcome.mechanism.label().to_string())
                .or_default();
            let payment = -outcome
                .ledger
                .net_for(crate::money::Party::Customer(outcome.customer));
            let receipts = outcome
                .ledger
                .net_for(crate::money::Party::Driver(outcome.driver));
            entry.auctions += 1;
            entry.settled += 1;
            entry.thin_markets += u64::from(outcome.thin_market);
            entry.clearing_total += outcome.clearing_price;
            entry.consumer_surplus += outcome.valuation - payment;
            entry.producer_surplus += receipts - outcome.driver_cost;
            entry.regret_total += outcome.regret;
            entry.guarantee_discounts += outcome.adjustments.discount;
            entry.fulfillment_fees += outcome.adjustments.fulfillment_fee;
            entry.incentive_fees += outcome.adjustments.incentive;
        }
        for failure in &output.failed {
            let entry = per_type
                .entry(failure.mechanism.label().to_string())
                .or_default();
            entry.auctions += 1;
            entry.failed += 1;
        }
        let market_metrics = surplus_metrics(&output.market);

        RunReport {
            format_version: REPORT_FORMAT_VERSION,
            scenario_digest: scenario.digest(),
            seed: scenario.seed,
            events: output.log.len() as u64,
            declined_requests: output.declined_requests,
            deadweight_loss: market_metrics.deadweight_loss,
            missed_feasible_trades: market_metrics.missed_feasible_trades,
            no_bid_fee_count: output.no_bid_fee_count,
            privacy_violations: audit_privacy(&output.log).len() as u64,
            per_type,
            integrity: IntegritySummary {
                collusion_groups: output.integrity.collusion_groups.len() as u64,
                sync_logoff_pairs: output.integrity.sync_logoff_pairs.len() as u64,
                gps_flags: output.integrity.gps_flags,
                revenue_mismatches: output.integrity.revenue_mismatches,
            },
            ledger: LedgerTotals {
                inflows: output.conservation.inflows,
                outflows: output.conservation.outflows,
                customer_payments: output.conservation.customer_payments,
                driver_fees: output.conservation.driver_fees,
                taxes: output.conservation.taxes,
                third_party: output.conservation.third_party,
                platform_retention: output.conservation.platform_retention,
                no_bid_fees: output.conservation.no_bid_fees,
                balanced: output.conservation.inflows == output.conservation.outflows,
            },
        }
    }

    /// Stable, pretty-printed JSON; byte-identical for identical runs.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<RunReport, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Comma-separated per-type metrics table.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "mechanism,auctions,settled,failed,thin_markets,clearing_total,\
             consumer_surplus,producer_surplus,regret_total,guarantee_discounts,\
             fulfillment_fees,incentive_fees\n",
        );
        for (label, m) in &self.per_type {
            out.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.auctions,
                m.settled,
                m.failed,
                m.thin_markets,
                m.clearing_total,
                m.consumer_surplus,
                m.producer_surplus,
                m.regret_total,
                m.guarantee_discounts,
                m.fulfillment_fees,
                m.incentive_fees,
            ));
        }
        out
    }
}

/// One row of the mechanism-vs-baseline comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub mechanism: String,
    pub mech_dwl: Money,
    pub base_dwl: Money,
    pub mech_consumer_surplus: Money,
    pub base_consumer_surplus: Money,
    pub mech_executed: u64,
    pub base_executed: u64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(
        "seed,mechanism,mech_dwl,base_dwl,mech_consumer_surplus,base_consumer_surplus,\
         mech_executed,base_executed\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.seed,
            row.mechanism,
            row.mech_dwl,
            row.base_dwl,
            row.mech_consumer_surplus,
            row.base_consumer_surplus,
            row.mech_executed,
            row.base_executed,
        ));
    }
    out
}

/// Sign-test summary over paired DWL rows: counts of seeds where the
/// mechanism beat, tied, or lost to the baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignTest {
    pub mechanism_lower: u64,
    pub ties: u64,
    pub baseline_lower: u64,
}

pub fn sign_test(rows: &[CompareRow]) -> SignTest {
    let mut summary = SignTest::default();
    for row in rows {
        match row.mech_dwl.cmp(&row.base_dwl) {
            std::cmp::Ordering::Less => summary.mechanism_lower += 1,
            std::cmp::Ordering::Equal => summary.ties += 1,
            std::cmp::Ordering::Greater => summary.baseline_lower += 1,
        }
    }
    summary
}
