//! Deterministic discrete-event engine: many concurrent cross-contingent
//! auctions coupled through shared drivers and the lockout registry.
//!
//! All randomness flows through seeded ChaCha streams keyed off the
//! scenario seed: one for supply (fleet), one for demand (arrivals),
//! one for in-market behavior. The baseline runner consumes only the
//! supply and demand streams, so mechanism and baseline runs see
//! identical draws on matched seeds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::event::{EventKind, EventLog};
use crate::agents::{
    choose_driver_action, propose_customer_bid, update_beliefs, BeliefState, CustomerPolicy,
    CustomerRequest, DriverObservation, DriverPolicy, DriverProfile,
};
use crate::ids::{hours, minutes, CustomerId, DriverId, RideId, Tick};
use crate::integrity::{
    apply_guarantees, detect_bid_band_collusion, detect_sync_logoff, reconcile_revenue,
    verify_distance, BidObservation, CollusionConfig, DistanceCheck, FlaggedGroup, FlaggedPair,
    GpsSample, GpsTrack, GuaranteeAdjustments, GuaranteeTerms, LogoffObservation, RevenueCheck,
};
use crate::mechanisms::{
    AuctionError, AuctionState, BidResolution, CustomerBid, DriverSnapshot, FailReason,
    LockoutRegistry, Phase, Quote, RouteEstimate,
};
use crate::money::{
    apply_fraction, Direction, Ledger, Money, Party, Probability, Reason,
};
use crate::params::{MechanismType, PlatformEconomics, PricingParams};
use crate::payoffs::{
    clearing_price, compute_driver_fee, driver_payoff, driver_regret, platform_payoff,
    ClearingBranch, DriverEconomics, ExecutedTrade, MarketRecord, ProbCombinator, TradeView,
};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    /// Mid-run invariant violation with the replay coordinates.
    #[error("invariant violation at seed {seed} tick {tick:?}: {message}")]
    Invariant {
        seed: u64,
        tick: Tick,
        message: String,
    },
}

/// A settled ride.
#[derive(Clone, Debug)]
pub struct RideOutcome {
    pub ride: RideId,
    pub customer: CustomerId,
    pub driver: DriverId,
    pub mechanism: MechanismType,
    pub valuation: Money,
    pub customer_cap: Money,
    pub winning_bid: Money,
    pub clearing_price: Money,
    pub branch: ClearingBranch,
    pub driver_fee: Money,
    pub driver_cost: Money,
    pub platform_payoff: Money,
    pub driver_payoff: Money,
    pub regret: Money,
    pub adjustments: GuaranteeAdjustments,
    pub gps: GpsTrack,
    pub ledger: Ledger,
    pub settled_at: Tick,
    pub thin_market: bool,
}

/// An auction that opened but produced no ride.
#[derive(Clone, Debug)]
pub struct FailedAuction {
    pub ride: RideId,
    pub mechanism: MechanismType,
    pub reason: FailReason,
}

#[derive(Clone, Debug, Default)]
pub struct IntegrityFindings {
    pub collusion_groups: Vec<FlaggedGroup>,
    pub sync_logoff_pairs: Vec<FlaggedPair>,
    pub gps_flags: u64,
    pub revenue_mismatches: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ConservationTotals {
    pub inflows: Money,
    pub outflows: Money,
    pub customer_payments: Money,
    pub driver_fees: Money,
    pub taxes: Money,
    pub third_party: Money,
    pub platform_retention: Money,
    pub no_bid_fees: Money,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub outcomes: Vec<RideOutcome>,
    pub failed: Vec<FailedAuction>,
    pub declined_requests: u64,
    pub market: MarketRecord,
    pub conservation: ConservationTotals,
    pub integrity: IntegrityFindings,
    pub no_bid_fee_count: u64,
}

/// One pre-drawn customer arrival. Sibling arrivals share a demand
/// group and count once in the market record.
#[derive(Clone, Debug)]
struct Arrival {
    at: Tick,
    customer: CustomerId,
    origin: (f64, f64),
    destination: (f64, f64),
    mechanism: MechanismType,
    valuation_factor: f64,
    group: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Open { arrival: usize },
    Respond { ride: RideId, driver: DriverId },
    CloseBidding { ride: RideId },
    Assign { ride: RideId },
    DriverArrive { ride: RideId },
    Board { ride: RideId },
    Gps { ride: RideId, index: u8 },
    Complete { ride: RideId },
    LogOff { driver: DriverId, until: Tick },
    LogOn { driver: DriverId },
}

struct ActiveAuction {
    auction: AuctionState,
    params: PricingParams,
    policy: CustomerPolicy,
    valuation: Money,
    route: RouteEstimate,
    origin: (f64, f64),
    destination: (f64, f64),
    cheapest_total_cost: Option<Money>,
    sibling: Option<RideId>,
    group: usize,
}

struct AssignedRide {
    customer: CustomerId,
    driver: DriverId,
    mechanism: MechanismType,
    valuation: Money,
    cap: Money,
    winning_bid: Money,
    clearing: Money,
    branch: ClearingBranch,
    params: PricingParams,
    terms: GuaranteeTerms,
    actual_arrival: Tick,
    customer_arrival: Tick,
    boarded_at: Tick,
    route: RouteEstimate,
    origin: (f64, f64),
    destination: (f64, f64),
    samples: Vec<GpsSample>,
    group: usize,
    thin_market: bool,
}

struct SimDriver {
    profile: DriverProfile,
    busy_until: Option<Tick>,
    ride_spans: Vec<(Tick, Tick)>,
    observations: Vec<DriverObservation>,
}

pub struct Engine<'a> {
    scenario: &'a Scenario,
    econ: PlatformEconomics,
    combinator: ProbCombinator,
    market_rng: ChaCha8Rng,
    drivers: BTreeMap<DriverId, SimDriver>,
    registry: LockoutRegistry,
    queue: BTreeMap<(Tick, u64), Action>,
    next_seq: u64,
    arrivals: Vec<Arrival>,
    active: BTreeMap<RideId, ActiveAuction>,
    assigned: BTreeMap<RideId, AssignedRide>,
    lockout_spans: BTreeMap<RideId, (DriverId, Tick, Tick)>,
    log: EventLog,
    outcomes: Vec<RideOutcome>,
    failed: Vec<FailedAuction>,
    declined: u64,
    trades: Vec<(usize, TradeView)>,
    resolved_groups: BTreeMap<usize, bool>,
    conservation: ConservationTotals,
    bid_observations: Vec<BidObservation>,
    logoff_observations: Vec<LogoffObservation>,
    gps_flags: u64,
    revenue_mismatches: u64,
    no_bid_fee_count: u64,
    next_ride: u64,
}

/// Runs a scenario end to end and returns the log, outcomes, metrics
/// and integrity findings. Byte-identical outputs for identical inputs.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario)?;
    engine.prime();
    engine.drain()?;
    Ok(engine.finish())
}

/// Fixed-price counterfactual on the same seed: every ride is offered
/// at the standard price; the nearest free driver whose costs the fee
/// covers serves a customer whose valuation covers the price.
pub fn run_baseline(scenario: &Scenario) -> Result<MarketRecord, SimError> {
    scenario.validate()?;
    let econ = scenario.economics.platform_economics()?;
    let fleet = build_fleet(scenario);
    let arrivals = draw_arrivals(scenario);
    let mut busy_until: BTreeMap<DriverId, Tick> = BTreeMap::new();
    let mut trades: Vec<(usize, TradeView)> = Vec::new();

    for arrival in &arrivals {
        let params = scenario.pricing.params_for(arrival.mechanism);
        let route = route_estimate(scenario, arrival.origin, arrival.destination);
        let quote = Quote::compute(&params, &econ, route);
        let fare = params.meter_rate.fare(route.distance_km, route.duration_minutes);
        let valuation = Money::from_f64_half_up(fare.as_f64() * arrival.valuation_factor);
        let price = quote.standard_price;

        let free: Vec<&DriverProfile> = fleet
            .iter()
            .filter(|d| {
                busy_until.get(&d.id).is_none_or(|&until| until <= arrival.at)
                    && !is_off_duty_at(d, arrival.at)
            })
            .collect();
        let cheapest_total_cost = cheapest_service_cost(&fleet, &econ);

        let taxes = apply_fraction(price, econ.taxes_rate).expect("validated taxes");
        let third_party = econ.third_party_fee.min((price - taxes).max(Money::ZERO));
        let fee = compute_driver_fee(price, taxes, third_party, &params)
            .expect("fee is feasible at the standard price");
        let mut server: Option<&DriverProfile> = None;
        // Customers ride only for strictly positive surplus; the
        // baseline platform shares the cost structure, so it does not
        // sell rides priced at or below its own break-even. Dispatch
        // fans out to the same nearest-driver set as the mechanisms.
        if valuation > price && price > quote.base_price {
            let mut nearest: Vec<&&DriverProfile> = free.iter().collect();
            nearest.sort_by(|a, b| {
                a.eta_seconds(arrival.origin)
                    .cmp(&b.eta_seconds(arrival.origin))
                    .then(a.id.cmp(&b.id))
            });
            server = nearest
                .iter()
                .take(params.max_selected)
                .find(|d| fee >= d.economics.total_cost())
                .map(|d| **d as &DriverProfile);
        }

        let view = match server {
            Some(driver) => {
                let eta = driver.eta_seconds(arrival.origin);
                let span = eta + (route.duration_minutes * 60.0).round() as u64;
                busy_until.insert(driver.id, arrival.at.plus(span));
                TradeView {
                    valuation,
                    executed: Some(ExecutedTrade {
                        payment: price,
                        driver_fee: fee,
                        driver_cost: driver.economics.total_cost(),
                    }),
                    cheapest_total_cost,
                }
            }
            None => TradeView {
                valuation,
                executed: None,
                cheapest_total_cost,
            },
        };
        trades.push((arrival.group, view));
    }

    Ok(MarketRecord {
        seed: scenario.seed,
        trades: coalesce_groups(trades),
    })
}

/// Sibling auctions represent one demand unit: keep the executed view
/// when any sibling executed, otherwise one missed view.
fn coalesce_groups(trades: Vec<(usize, TradeView)>) -> Vec<TradeView> {
    let mut by_group: BTreeMap<usize, TradeView> = BTreeMap::new();
    for (group, view) in trades {
        match by_group.get(&group) {
            Some(existing) if existing.executed.is_some() => {}
            Some(_) if view.executed.is_none() => {}
            _ => {
                by_group.insert(group, view);
            }
        }
    }
    by_group.into_values().collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Box-Muller standard normal draw.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn is_off_duty_at(driver: &DriverProfile, at: Tick) -> bool {
    driver
        .off_duty_windows
        .iter()
        .any(|&(from, to)| from <= at && at < to)
}

/// Fleet-static cheapest cost of serving one ride (cheapest driver plus
/// platform per-ride costs). A missed feasible trade forgoes at least
/// its valuation minus this; using a run-invariant basis keeps the
/// mechanism and baseline deadweight losses directly comparable.
fn cheapest_service_cost(fleet: &[DriverProfile], econ: &PlatformEconomics) -> Option<Money> {
    fleet
        .iter()
        .map(|d| d.economics.total_cost() + econ.beta_f + econ.beta_v)
        .min()
}

fn route_estimate(scenario: &Scenario, origin: (f64, f64), dest: (f64, f64)) -> RouteEstimate {
    let dx = dest.0 - origin.0;
    let dy = dest.1 - origin.1;
    let distance_km = (dx * dx + dy * dy).sqrt().max(0.3);
    let nominal_speed =
        (scenario.fleet.speed_kmh.min + scenario.fleet.speed_kmh.max) / 2.0;
    RouteEstimate {
        distance_km,
        duration_minutes: distance_km / nominal_speed * 60.0,
    }
}

fn build_fleet(scenario: &Scenario) -> Vec<DriverProfile> {
    let mut rng = stream_rng(scenario.seed, 1);
    let fleet_cfg = &scenario.fleet;
    let duration = minutes(scenario.duration_minutes);
    (0..fleet_cfg.drivers)
        .map(|i| {
            let position = (
                rng.random_range(0.0..scenario.grid.width_km),
                rng.random_range(0.0..scenario.grid.height_km),
            );
            let speed = rng.random_range(fleet_cfg.speed_kmh.min..=fleet_cfg.speed_kmh.max);
            let quality = rng.random_range(fleet_cfg.quality.min..=fleet_cfg.quality.max);
            let d_v = rng.random_range(fleet_cfg.cost_variable.min..=fleet_cfg.cost_variable.max);
            let d_f = rng.random_range(fleet_cfg.cost_fixed.min..=fleet_cfg.cost_fixed.max);
            let margin = rng.random_range(fleet_cfg.margin.min..=fleet_cfg.margin.max);
            let preset = rng
                .random_range(fleet_cfg.preset_fraction.min..=fleet_cfg.preset_fraction.max);
            // Off-duty windows drawn per driver across the run span.
            let mut windows = Vec::new();
            let expected = fleet_cfg.off_duty_per_day * scenario.duration_minutes as f64
                / (24.0 * 60.0);
            let count = expected.floor() as u32
                + u32::from(rng.random::<f64>() < expected.fract());
            for _ in 0..count {
                let start = rng.random_range(0..duration.max(1));
                windows.push((
                    Tick(start),
                    Tick(start + minutes(fleet_cfg.off_duty_minutes)),
                ));
            }
            windows.sort();
            windows.dedup_by(|b, a| {
                if b.0 <= a.1 {
                    a.1 = a.1.max(b.1);
                    true
                } else {
                    false
                }
            });
            DriverProfile {
                id: DriverId(i + 1),
                position,
                speed_kmh: speed,
                quality,
                economics: DriverEconomics {
                    d_v: Money::from_minor(d_v),
                    d_f: Money::from_minor(d_f),
                    psi_od: Money::ZERO,
                    beta_od: Probability::ZERO,
                    beta_ld: Probability::ONE,
                    beta_id: Probability::ONE,
                    beta_idw: Probability::ONE,
                },
                policy: DriverPolicy {
                    margin: Money::from_minor(margin),
                    preset_fraction: preset,
                    auto_weight: fleet_cfg.auto_weight,
                    no_bid_weight: fleet_cfg.no_bid_weight,
                },
                beliefs: BeliefState {
                    psi_od: Money::ZERO,
                    beta_od: Probability::ZERO,
                },
                off_duty_windows: windows,
            }
        })
        .collect()
}

fn draw_arrivals(scenario: &Scenario) -> Vec<Arrival> {
    let mut rng = stream_rng(scenario.seed, 2);
    let demand = &scenario.demand;
    let grid = &scenario.grid;
    let horizon = minutes(scenario.duration_minutes) as f64;
    let rate_per_second = demand.arrivals_per_minute / 60.0;
    let mechanisms: Vec<(MechanismType, f64)> = scenario
        .pricing
        .mechanism_mix
        .iter()
        .map(|(m, w)| (*m, *w))
        .collect();
    let total_weight: f64 = mechanisms.iter().map(|(_, w)| w).sum();

    let mut arrivals = Vec::new();
    let mut t = 0.0f64;
    let mut customer = 0u32;
    let mut group = 0usize;
    loop {
        let u: f64 = rng.random::<f64>().max(1e-12);
        t += -u.ln() / rate_per_second;
        if t >= horizon {
            break;
        }
        customer += 1;
        group += 1;
        let mut pick = rng.random::<f64>() * total_weight;
        let mechanism = mechanisms
            .iter()
            .find(|(_, w)| {
                pick -= w;
                pick <= 0.0
            })
            .map(|(m, _)| *m)
            .unwrap_or(mechanisms[mechanisms.len() - 1].0);
        let origin = (
            rng.random_range(0.0..grid.width_km),
            rng.random_range(0.0..grid.height_km),
        );
        let destination = (
            rng.random_range(0.0..grid.width_km),
            rng.random_range(0.0..grid.height_km),
        );
        let valuation_factor =
            (demand.valuation_factor_mu + demand.valuation_factor_sigma * normal(&mut rng)).exp();
        let sibling = rng.random::<f64>() < demand.sibling_probability;
        arrivals.push(Arrival {
            at: Tick(t as u64),
            customer: CustomerId(customer),
            origin,
            destination,
            mechanism,
            valuation_factor,
            group,
        });
        if sibling {
            // Same demand unit, second auction opened within 100 m.
            let offset = (
                (origin.0 + 0.07).min(grid.width_km - 0.001),
                (origin.1 + 0.07).min(grid.height_km - 0.001),
            );
            arrivals.push(Arrival {
                at: Tick(t as u64 + 1),
                customer: CustomerId(customer),
                origin: offset,
                destination,
                mechanism,
                valuation_factor,
                group,
            });
        }
    }
    arrivals
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        let econ = scenario.economics.platform_economics()?;
        let combinator = ProbCombinator::from(scenario.economics.combinator);
        let drivers = build_fleet(scenario)
            .into_iter()
            .map(|profile| {
                (
                    profile.id,
                    SimDriver {
                        profile,
                        busy_until: None,
                        ride_spans: Vec::new(),
                        observations: Vec::new(),
                    },
                )
            })
            .collect();
        Ok(Engine {
            scenario,
            econ,
            combinator,
            market_rng: stream_rng(scenario.seed, 3),
            drivers,
            registry: LockoutRegistry::new(),
            queue: BTreeMap::new(),
            next_seq: 0,
            arrivals: draw_arrivals(scenario),
            active: BTreeMap::new(),
            assigned: BTreeMap::new(),
            lockout_spans: BTreeMap::new(),
            log: EventLog::new(),
            outcomes: Vec::new(),
            failed: Vec::new(),
            declined: 0,
            trades: Vec::new(),
            resolved_groups: BTreeMap::new(),
            conservation: ConservationTotals::default(),
            bid_observations: Vec::new(),
            logoff_observations: Vec::new(),
            gps_flags: 0,
            revenue_mismatches: 0,
            no_bid_fee_count: 0,
            next_ride: 0,
        })
    }

    fn prime(&mut self) {
        for index in 0..self.arrivals.len() {
            let at = self.arrivals[index].at;
            self.schedule(at, Action::Open { arrival: index });
        }
        let windows: Vec<(DriverId, Tick, Tick)> = self
            .drivers
            .values()
            .flat_map(|d| {
                d.profile
                    .off_duty_windows
                    .iter()
                    .map(|&(from, to)| (d.profile.id, from, to))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (driver, from, to) in windows {
            self.schedule(from, Action::LogOff { driver, until: to });
            self.schedule(to, Action::LogOn { driver });
        }
    }

    fn schedule(&mut self, at: Tick, action: Action) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at, seq), action);
    }

    fn drain(&mut self) -> Result<(), SimError> {
        let mut last_tick = Tick(0);
        while let Some((&(tick, seq), _)) = self.queue.iter().next() {
            if tick < last_tick {
                return Err(self.invariant(tick, "event timestamps went backwards"));
            }
            last_tick = tick;
            let action = self.queue.remove(&(tick, seq)).expect("peeked key exists");
            self.step(tick, action)?;
        }
        // Conservation over the whole run, exact to the minor unit.
        if self.conservation.inflows != self.conservation.outflows {
            return Err(self.invariant(
                last_tick,
                &format!(
                    "conservation failed: inflows {} != outflows {}",
                    self.conservation.inflows, self.conservation.outflows
                ),
            ));
        }
        Ok(())
    }

    fn invariant(&self, tick: Tick, message: &str) -> SimError {
        SimError::Invariant {
            seed: self.scenario.seed,
            tick,
            message: message.to_string(),
        }
    }

    fn step(&mut self, now: Tick, action: Action) -> Result<(), SimError> {
        match action {
            Action::Open { arrival } => self.handle_open(now, arrival),
            Action::Respond { ride, driver } => {
                self.handle_respond(now, ride, driver);
                Ok(())
            }
            Action::CloseBidding { ride } => {
                self.handle_close(now, ride);
                Ok(())
            }
            Action::Assign { ride } => self.handle_assign(now, ride),
            Action::DriverArrive { ride } => {
                self.handle_driver_arrive(now, ride);
                Ok(())
            }
            Action::Board { ride } => {
                self.handle_board(now, ride);
                Ok(())
            }
            Action::Gps { ride, index } => {
                self.handle_gps(now, ride, index);
                Ok(())
            }
            Action::Complete { ride } => self.handle_complete(now, ride),
            Action::LogOff { driver, until } => {
                self.registry.log_off(driver, now, until.0.saturating_sub(now.0));
                self.logoff_observations.push(LogoffObservation { driver, tick: now });
                self.log
                    .push(now, EventKind::DriverLoggedOff { driver }, vec![Party::Platform]);
                Ok(())
            }
            Action::LogOn { driver } => {
                if self.registry.try_log_on(driver, now) {
                    self.log
                        .push(now, EventKind::DriverLoggedOn { driver }, vec![Party::Platform]);
                }
                Ok(())
            }
        }
    }

    fn handle_open(&mut self, now: Tick, arrival_index: usize) -> Result<(), SimError> {
        let arrival = self.arrivals[arrival_index].clone();
        let params = self.scenario.pricing.params_for(arrival.mechanism);
        let route = route_estimate(self.scenario, arrival.origin, arrival.destination);
        let quote = Quote::compute(&params, &self.econ, route);
        let fare = params.meter_rate.fare(route.distance_km, route.duration_minutes);
        let valuation = Money::from_f64_half_up(fare.as_f64() * arrival.valuation_factor);
        let request = CustomerRequest {
            id: arrival.customer,
            origin: arrival.origin,
            destination: arrival.destination,
            valuation,
            policy: CustomerPolicy::default(),
        };

        let platform_cost = self.econ.beta_f + self.econ.beta_v;
        let cheapest_total_cost = self
            .drivers
            .values()
            .map(|d| d.profile.economics.total_cost() + platform_cost)
            .min();

        self.next_ride += 1;
        let ride = RideId(self.next_ride);
        self.log.push(
            now,
            EventKind::RideRequested {
                ride,
                customer: arrival.customer,
                mechanism: arrival.mechanism,
            },
            vec![Party::Platform, Party::Customer(arrival.customer)],
        );
        self.log.push(
            now,
            EventKind::QuoteIssued {
                ride,
                standard: quote.standard_price,
                base: quote.base_price,
            },
            vec![Party::Platform, Party::Customer(arrival.customer)],
        );

        let flex_band = (arrival.mechanism == MechanismType::T4).then(|| {
            let low = apply_fraction(quote.standard_price, 1.0 - params.flex_band)
                .expect("validated band");
            let high = apply_fraction(quote.standard_price, 1.0 + params.flex_band)
                .expect("validated band");
            (low, high)
        });
        let Some(customer_bid) = propose_customer_bid(
            &request,
            arrival.mechanism,
            quote.standard_price,
            quote.base_price,
            flex_band,
        ) else {
            self.declined += 1;
            self.record_trade(arrival.group, TradeView {
                valuation,
                executed: None,
                cheapest_total_cost,
            });
            return Ok(());
        };

        let mut auction = match AuctionState::open(
            ride,
            arrival.customer,
            quote,
            customer_bid,
            &params,
            now,
        ) {
            Ok(auction) => auction,
            Err(_) => {
                // Degenerate pricing (standard at or below base); the
                // request cannot open as this type.
                self.declined += 1;
                self.record_trade(arrival.group, TradeView {
                    valuation,
                    executed: None,
                    cheapest_total_cost,
                });
                return Ok(());
            }
        };
        self.log.push(
            now,
            EventKind::CustomerBidPlaced {
                ride,
                customer: arrival.customer,
                bid: customer_bid,
            },
            vec![Party::Platform, Party::Customer(arrival.customer)],
        );

        let snapshots: Vec<DriverSnapshot> = self
            .drivers
            .values()
            .map(|d| DriverSnapshot {
                id: d.profile.id,
                eta_seconds: d.profile.eta_seconds(arrival.origin).max(30),
                quality: d.profile.quality,
                off_duty: self.registry.is_off_duty(d.profile.id),
                busy: d.busy_until.is_some_and(|until| until > now),
            })
            .collect();
        auction
            .select_drivers(&snapshots, &self.registry, &params, now)
            .expect("selection from Opened phase");

        if auction.phase() == Phase::Failed {
            self.log.push(
                now,
                EventKind::AuctionFailed {
                    ride,
                    reason: FailReason::NoSupply,
                },
                vec![Party::Platform, Party::Customer(arrival.customer)],
            );
            self.failed.push(FailedAuction {
                ride,
                mechanism: arrival.mechanism,
                reason: FailReason::NoSupply,
            });
            self.record_trade(arrival.group, TradeView {
                valuation,
                executed: None,
                cheapest_total_cost,
            });
            return Ok(());
        }

        let selected: Vec<DriverId> = auction.selected().iter().map(|s| s.id).collect();
        self.log.push(
            now,
            EventKind::DriversSelected {
                ride,
                drivers: selected.clone(),
                thin_market: auction.thin_market,
            },
            vec![Party::Platform],
        );
        let mut relay_visibility = vec![Party::Platform, Party::Customer(arrival.customer)];
        relay_visibility.extend(selected.iter().map(|d| Party::Driver(*d)));
        self.log.push(
            now,
            EventKind::CustomerBidRelayed {
                ride,
                bid: customer_bid,
                drivers: selected.clone(),
            },
            relay_visibility,
        );

        // Sibling linkage: a previous live auction of the same group.
        let sibling = self
            .active
            .iter()
            .find(|(_, a)| a.group == arrival.group)
            .map(|(id, _)| *id);
        if let Some(other) = sibling {
            if let Some(entry) = self.active.get_mut(&other) {
                entry.sibling = Some(ride);
            }
        }

        for driver in &selected {
            let stagger = self
                .market_rng
                .random_range(5..params.bid_window.saturating_sub(20).max(6));
            self.schedule(now.plus(stagger), Action::Respond { ride, driver: *driver });
        }
        self.schedule(now.plus(params.bid_window), Action::CloseBidding { ride });

        self.active.insert(ride, ActiveAuction {
            auction,
            params,
            policy: request.policy,
            valuation,
            route,
            origin: arrival.origin,
            destination: arrival.destination,
            cheapest_total_cost,
            sibling,
            group: arrival.group,
        });
        Ok(())
    }


    fn handle_respond(&mut self, now: Tick, ride: RideId, driver_id: DriverId) {
        let Some(entry) = self.active.get_mut(&ride) else {
            return;
        };
        if entry.auction.phase() >= Phase::Assigned {
            return;
        }
        let driver = self.drivers.get(&driver_id).expect("selected drivers exist");
        if self.registry.is_off_duty(driver_id)
            || driver.busy_until.is_some_and(|until| until > now)
        {
            // Silent: the driver dropped out mid-auction.
            return;
        }
        let preference = choose_driver_action(
            &driver.profile,
            &entry.auction,
            self.combinator,
            &mut self.market_rng,
        );
        match entry.auction.submit_bid(driver_id, preference, &self.registry, now) {
            Ok(BidResolution::Bid(price)) => {
                self.bid_observations.push(BidObservation {
                    driver: driver_id,
                    customer: entry.auction.customer,
                    neighborhood: self.scenario.grid.neighborhood_of(entry.origin),
                    tick: now,
                    price,
                });
                self.log.push(
                    now,
                    EventKind::DriverBidSubmitted { ride, driver: driver_id, price },
                    vec![Party::Platform, Party::Driver(driver_id)],
                );
            }
            Ok(BidResolution::NoBid { exempt }) => {
                self.log.push(
                    now,
                    EventKind::DriverNoBid { ride, driver: driver_id, exempt },
                    vec![Party::Platform, Party::Driver(driver_id)],
                );
            }
            Err(AuctionError::LockedOut(_)) => {
                entry.auction.record_exempt_no_bid(driver_id);
                self.log.push(
                    now,
                    EventKind::DriverNoBid { ride, driver: driver_id, exempt: true },
                    vec![Party::Platform, Party::Driver(driver_id)],
                );
            }
            Err(AuctionError::LateBid(_)) | Err(AuctionError::AlreadyBid(_)) => {}
            Err(err) => {
                debug_assert!(false, "agent produced an invalid action: {err}");
            }
        }
    }

    fn handle_close(&mut self, now: Tick, ride: RideId) {
        let (fees, fee) = {
            let Some(entry) = self.active.get_mut(&ride) else {
                return;
            };
            if entry.auction.phase() >= Phase::Assigned {
                return;
            }
            (entry.auction.close_bidding(&entry.params), entry.params.no_bid_fee)
        };
        for driver in fees {
            if fee > Money::ZERO {
                let mut ledger = Ledger::new();
                ledger.push(Party::Driver(driver), Direction::Inflow, fee, Reason::NoBidFee);
                ledger.push(Party::Platform, Direction::Outflow, fee, Reason::NoBidFee);
                self.absorb_ledger(&ledger);
                self.conservation.no_bid_fees += fee;
                self.no_bid_fee_count += 1;
                self.log.push(
                    now,
                    EventKind::NoBidFeeCharged { ride, driver, fee },
                    vec![Party::Platform, Party::Driver(driver)],
                );
            }
        }

        // Customer revision policy (blind: driver bids are not visible
        // to the customer).
        let entry = self.active.get_mut(&ride).expect("checked above");
        let patient = self.market_rng.random::<f64>() < entry.policy.patience;
        let mut assign_delay = 0u64;
        if patient {
            let revised = match entry.auction.customer_bid() {
                CustomerBid::Standard { price } if entry.auction.customer_revisions() == 0 => {
                    let squeezed = apply_fraction(price, 0.92).expect("fraction in range");
                    let floor = entry.auction.base_price + Money::from_minor(1);
                    let target = squeezed.max(floor);
                    (target < price)
                        .then_some(CustomerBid::Standard { price: target })
                }
                CustomerBid::PriorityMin { price } if entry.auction.customer_revisions() == 0 => {
                    let feasible = entry
                        .auction
                        .bids()
                        .any(|(_, bid)| bid < entry.auction.cap());
                    if feasible {
                        None
                    } else {
                        let raised = apply_fraction(price, 1.10)
                            .expect("fraction in range")
                            .min(entry.valuation);
                        (raised > price).then_some(CustomerBid::PriorityMin { price: raised })
                    }
                }
                _ => None,
            };
            if let Some(new_bid) = revised {
                if entry.auction.revise_customer(new_bid, now).is_ok() {
                    let drivers: Vec<DriverId> =
                        entry.auction.selected().iter().map(|s| s.id).collect();
                    let mut visibility =
                        vec![Party::Platform, Party::Customer(entry.auction.customer)];
                    visibility.extend(drivers.iter().map(|d| Party::Driver(*d)));
                    self.log.push(
                        now,
                        EventKind::CustomerRevised {
                            ride,
                            bid: new_bid,
                            revision: entry.auction.customer_revisions(),
                            drivers,
                        },
                        visibility,
                    );
                    assign_delay = 30;
                }
            }
        }
        self.schedule(now.plus(assign_delay), Action::Assign { ride });
    }

    fn handle_assign(&mut self, now: Tick, ride: RideId) -> Result<(), SimError> {
        let Some(mut entry) = self.active.remove(&ride) else {
            return Ok(());
        };
        if entry.auction.phase() >= Phase::Assigned {
            return Ok(());
        }
        // Drivers still on a ride are physically unavailable even when
        // their lockout window has lapsed.
        let unavailable: std::collections::BTreeSet<DriverId> = self
            .drivers
            .values()
            .filter(|d| d.busy_until.is_some_and(|until| until > now))
            .map(|d| d.profile.id)
            .collect();
        entry
            .auction
            .assign(&mut self.registry, &entry.params, now, &unavailable)
            .expect("assignment from a live phase");

        if entry.auction.phase() == Phase::Failed {
            let reason = entry.auction.fail_reason.expect("failed auctions carry a reason");
            self.fail_auction(now, &entry, reason);
            return Ok(());
        }

        let primary = entry.auction.primary.expect("assigned auctions have a primary");
        let winning_bid = entry.auction.winning_bid.expect("assigned auctions have a bid");
        let lock_from = now.minus(entry.params.lockout_before);
        let lock_to = now.plus(entry.params.lockout_after);
        self.lockout_spans.insert(ride, (primary, lock_from, lock_to));

        let (clearing, branch) = clearing_price(
            entry.auction.mechanism,
            entry.auction.cap(),
            winning_bid,
            entry.auction.base_price,
            entry.auction.clearing_standard(),
        );
        if branch == ClearingBranch::Infeasible {
            // No trade consummates; roll the reservation back.
            self.registry.release(primary, lock_from, lock_to);
            self.lockout_spans.remove(&ride);
            entry.auction.fail(FailReason::InfeasibleClearing);
            self.fail_auction(now, &entry, FailReason::InfeasibleClearing);
            return Ok(());
        }

        let customer = entry.auction.customer;
        self.log.push(
            now,
            EventKind::Assigned { ride, clearing_price: clearing },
            vec![Party::Platform],
        );
        self.log.push(
            now,
            EventKind::WinNotified { ride, driver: primary },
            vec![Party::Platform, Party::Driver(primary)],
        );
        self.log.push(
            now,
            EventKind::FinalPriceNotified { ride, customer, price: clearing },
            vec![Party::Platform, Party::Customer(customer)],
        );
        self.log.push(
            now,
            EventKind::PaymentMade { ride, customer, amount: clearing },
            vec![Party::Platform, Party::Customer(customer)],
        );
        self.log.push(
            now,
            EventKind::IdentityRevealed { ride, customer, driver: primary },
            vec![Party::Platform, Party::Customer(customer), Party::Driver(primary)],
        );

        // Cancel the sibling auction: first assignment wins the group.
        if let Some(other) = entry.sibling {
            if let Some(mut sibling_entry) = self.active.remove(&other) {
                sibling_entry.auction.fail(FailReason::Cancelled);
                self.log.push(
                    now,
                    EventKind::AuctionCancelled { ride: other },
                    vec![Party::Platform, Party::Customer(sibling_entry.auction.customer)],
                );
                self.failed.push(FailedAuction {
                    ride: other,
                    mechanism: sibling_entry.auction.mechanism,
                    reason: FailReason::Cancelled,
                });
            }
        }

        let eta = entry
            .auction
            .selected()
            .iter()
            .find(|s| s.id == primary)
            .expect("primary was selected")
            .eta_seconds;
        let promised_arrival = now.plus(eta + self.scenario.fleet.promise_buffer_seconds);
        let traffic: f64 =
            (self.scenario.fleet.traffic_sigma * normal(&mut self.market_rng)).exp();
        let actual_arrival = now.plus((eta as f64 * traffic).round() as u64);

        let demand = &self.scenario.demand;
        let grace = minutes(self.scenario.guarantees.customer_grace_minutes);
        let customer_arrival = if self.market_rng.random::<f64>()
            < demand.customer_late_probability
        {
            let extra = self
                .market_rng
                .random_range(1..=minutes(demand.customer_late_max_minutes).max(2));
            actual_arrival.plus(grace + extra)
        } else {
            actual_arrival.plus(self.market_rng.random_range(0..grace.max(2) / 2))
        };
        let boarded_at = actual_arrival.max(customer_arrival);

        let driver = self.drivers.get_mut(&primary).expect("primary exists");
        let ride_seconds = (entry.route.distance_km / driver.profile.speed_kmh * 3600.0
            * (self.scenario.fleet.traffic_sigma * normal(&mut self.market_rng)).exp())
        .round() as u64;
        let completion = boarded_at.plus(ride_seconds.max(30));
        if driver.busy_until.is_some_and(|until| until > now) {
            return Err(self.invariant(now, "assigned a ride to a busy driver"));
        }
        driver.busy_until = Some(completion);
        driver.ride_spans.push((now, completion));

        let expected_ride = entry.route.distance_km / driver.profile.speed_kmh * 3600.0;
        let incentive_deadline = boarded_at.plus(
            (expected_ride * self.scenario.guarantees.incentive_slack).round() as u64,
        );
        let mut terms = self.scenario.guarantee_terms_template();
        terms.promised_arrival = promised_arrival;
        terms.incentive_deadline = incentive_deadline;
        if !self.scenario.guarantees.enabled {
            // Neutral terms: nothing triggers.
            terms.promised_arrival = Tick(u64::MAX);
            terms.fulfillment_fee_schedule.clear();
            terms.incentive_fee = Money::ZERO;
            terms.incentive_deadline = Tick(0);
        }

        // Losers observe what their own bid would have earned.
        for (loser, bid) in entry.auction.bids() {
            if loser == primary {
                continue;
            }
            let taxes = apply_fraction(bid, self.econ.taxes_rate).expect("validated");
            let third_party = self.econ.third_party_fee.min((bid - taxes).max(Money::ZERO));
            let fee = compute_driver_fee(bid, taxes, third_party, &entry.params)
                .unwrap_or(Money::ZERO);
            let cost = self.drivers[&loser].profile.economics.total_cost();
            self.push_observation(loser, DriverObservation {
                won: false,
                alternative_net_profit: Some(fee - cost),
            });
        }
        self.push_observation(primary, DriverObservation {
            won: true,
            alternative_net_profit: None,
        });

        self.schedule(actual_arrival, Action::DriverArrive { ride });
        self.schedule(boarded_at, Action::Board { ride });
        // Five sensor samples spread over the ride; the last lands on
        // the completion tick ahead of the completion action itself.
        for index in 0..5u8 {
            let offset = ride_seconds.max(30) * index as u64 / 4;
            self.schedule(boarded_at.plus(offset), Action::Gps { ride, index });
        }
        self.schedule(completion, Action::Complete { ride });
        self.assigned.insert(ride, AssignedRide {
            customer,
            driver: primary,
            mechanism: entry.auction.mechanism,
            valuation: entry.valuation,
            cap: entry.auction.cap(),
            winning_bid,
            clearing,
            branch,
            params: entry.params.clone(),
            terms,
            actual_arrival,
            customer_arrival,
            boarded_at,
            route: entry.route,
            origin: entry.origin,
            destination: entry.destination,
            samples: Vec::with_capacity(5),
            group: entry.group,
            thin_market: entry.auction.thin_market,
        });
        Ok(())
    }

    fn fail_auction(&mut self, now: Tick, entry: &ActiveAuction, reason: FailReason) {
        self.log.push(
            now,
            EventKind::AuctionFailed { ride: entry.auction.ride_id, reason },
            vec![Party::Platform, Party::Customer(entry.auction.customer)],
        );
        self.failed.push(FailedAuction {
            ride: entry.auction.ride_id,
            mechanism: entry.auction.mechanism,
            reason,
        });
        self.record_trade(entry.group, TradeView {
            valuation: entry.valuation,
            executed: None,
            cheapest_total_cost: entry.cheapest_total_cost,
        });
    }

    fn push_observation(&mut self, driver_id: DriverId, obs: DriverObservation) {
        let window = self.scenario.learning.belief_window.max(1);
        let lambda = self.scenario.learning.lambda;
        let driver = self.drivers.get_mut(&driver_id).expect("driver exists");
        driver.observations.push(obs);
        if driver.observations.len() >= window {
            driver.profile.beliefs =
                update_beliefs(driver.profile.beliefs, &driver.observations, lambda);
            driver.observations.clear();
        }
    }

    fn handle_driver_arrive(&mut self, now: Tick, ride: RideId) {
        let Some(record) = self.assigned.get(&ride) else {
            return;
        };
        self.log.push(
            now,
            EventKind::DriverArrived {
                ride,
                driver: record.driver,
                promised: record.terms.promised_arrival,
                actual: now,
            },
            vec![
                Party::Platform,
                Party::Customer(record.customer),
                Party::Driver(record.driver),
            ],
        );
    }

    fn handle_board(&mut self, now: Tick, ride: RideId) {
        let Some(record) = self.assigned.get(&ride) else {
            return;
        };
        self.log.push(
            now,
            EventKind::RideStarted { ride, boarded_at: record.boarded_at },
            vec![
                Party::Platform,
                Party::Customer(record.customer),
                Party::Driver(record.driver),
            ],
        );
    }

    /// Platform-sensor position sample along the route.
    fn handle_gps(&mut self, now: Tick, ride: RideId, index: u8) {
        let Some(record) = self.assigned.get_mut(&ride) else {
            return;
        };
        let frac = index as f64 / 4.0;
        let pos = (
            record.origin.0 + (record.destination.0 - record.origin.0) * frac,
            record.origin.1 + (record.destination.1 - record.origin.1) * frac,
        );
        let (lat, lon) = self.scenario.grid.to_lat_lon(pos);
        record.samples.push(GpsSample { tick: now, lat, lon });
        self.log.push(
            now,
            EventKind::GpsSampled { ride, lat, lon },
            vec![Party::Platform],
        );
    }

    fn handle_complete(&mut self, now: Tick, ride: RideId) -> Result<(), SimError> {
        let Some(record) = self.assigned.remove(&ride) else {
            return Ok(());
        };
        let boarded_at = record.boarded_at;
        let fare = record
            .params
            .meter_rate
            .fare(record.route.distance_km, record.route.duration_minutes);
        let gps = GpsTrack {
            samples: record.samples.clone(),
            precomputed_distance_km: record.route.distance_km,
            precomputed_fare: fare,
            reported_distance_km: record.route.distance_km,
        };
        match verify_distance(&gps, self.scenario.integrity.gps_tolerance) {
            Ok(DistanceCheck::Ok { .. }) => {}
            Ok(DistanceCheck::Discrepancy { .. }) => self.gps_flags += 1,
            Err(_) => return Err(self.invariant(now, "engine produced an invalid GPS track")),
        }
        let occupancy_minutes = (now.0.saturating_sub(boarded_at.0)) as f64 / 60.0;
        let sensed_km_per_minute = if occupancy_minutes > 0.0 {
            gps.sampled_distance_km() / occupancy_minutes
        } else {
            0.0
        };
        if let RevenueCheck::Mismatch { .. } = reconcile_revenue(
            occupancy_minutes,
            &record.params.meter_rate,
            sensed_km_per_minute,
            fare,
            self.scenario.integrity.revenue_tolerance,
        ) {
            self.revenue_mismatches += 1;
        }

        let taxes = apply_fraction(record.clearing, self.econ.taxes_rate).expect("validated");
        let third_party = self
            .econ
            .third_party_fee
            .min((record.clearing - taxes).max(Money::ZERO));
        let driver_fee = compute_driver_fee(record.clearing, taxes, third_party, &record.params)
            .expect("net fare is non-negative");
        let (adjustments, ledger) = apply_guarantees(
            record.customer,
            record.driver,
            record.clearing,
            driver_fee,
            taxes,
            third_party,
            &record.terms,
            record.actual_arrival,
            record.customer_arrival,
            now,
        );
        if !ledger.is_balanced() {
            return Err(self.invariant(now, "settlement ledger out of balance"));
        }
        self.absorb_ledger(&ledger);
        self.conservation.customer_payments += -ledger.net_for(Party::Customer(record.customer));
        self.conservation.driver_fees += ledger.net_for(Party::Driver(record.driver));
        self.conservation.taxes += taxes;
        self.conservation.third_party += third_party;
        self.conservation.platform_retention += ledger.net_for(Party::Platform);

        let driver = self.drivers.get_mut(&record.driver).expect("driver exists");
        driver.profile.position = record.destination;

        let mut driver_econ = driver.profile.economics.clone();
        driver_econ.psi_od = driver.profile.beliefs.psi_od;
        driver_econ.beta_od = driver.profile.beliefs.beta_od;
        let p_s = driver_payoff(driver_fee, &driver_econ, self.combinator);
        let p_o = platform_payoff(record.clearing, driver_fee, &self.econ, self.combinator);
        let alternatives: Vec<Money> = driver
            .observations
            .iter()
            .filter_map(|o| o.alternative_net_profit)
            .collect();
        let regret = driver_regret(p_s, &alternatives);

        self.log.push(
            now,
            EventKind::RideCompleted { ride, completed_at: now },
            vec![
                Party::Platform,
                Party::Customer(record.customer),
                Party::Driver(record.driver),
            ],
        );
        self.log.push(
            now,
            EventKind::Settled {
                ride,
                payment: -ledger.net_for(Party::Customer(record.customer)),
                driver_fee: ledger.net_for(Party::Driver(record.driver)),
                taxes,
                third_party,
                retention: ledger.net_for(Party::Platform),
                fee_clamped: adjustments.fee_clamped,
            },
            vec![Party::Platform],
        );

        let payment = -ledger.net_for(Party::Customer(record.customer));
        let driver_receipts = ledger.net_for(Party::Driver(record.driver));
        self.record_trade(record.group, TradeView {
            valuation: record.valuation,
            executed: Some(ExecutedTrade {
                payment,
                driver_fee: driver_receipts,
                driver_cost: driver_econ.total_cost(),
            }),
            cheapest_total_cost: None,
        });
        self.outcomes.push(RideOutcome {
            ride,
            customer: record.customer,
            driver: record.driver,
            mechanism: record.mechanism,
            valuation: record.valuation,
            customer_cap: record.cap,
            winning_bid: record.winning_bid,
            clearing_price: record.clearing,
            branch: record.branch,
            driver_fee,
            driver_cost: driver_econ.total_cost(),
            platform_payoff: p_o,
            driver_payoff: p_s,
            regret,
            adjustments,
            gps,
            ledger,
            settled_at: now,
            thin_market: record.thin_market,
        });
        Ok(())
    }

    fn absorb_ledger(&mut self, ledger: &Ledger) {
        self.conservation.inflows += ledger.inflows();
        self.conservation.outflows += ledger.outflows();
    }

    fn record_trade(&mut self, group: usize, view: TradeView) {
        let executed = view.executed.is_some();
        match self.resolved_groups.get(&group) {
            Some(true) => return,
            Some(false) if !executed => return,
            _ => {}
        }
        if executed {
            self.trades.retain(|(g, _)| *g != group);
        }
        self.resolved_groups.insert(group, executed);
        self.trades.push((group, view));
    }

    fn finish(mut self) -> RunOutput {
        let integrity_cfg = &self.scenario.integrity;
        let collusion_groups = detect_bid_band_collusion(&self.bid_observations, &CollusionConfig {
            band: integrity_cfg.collusion_band,
            min_customers: integrity_cfg.collusion_min_customers,
            window_seconds: hours(integrity_cfg.collusion_window_hours),
        });
        let sync_logoff_pairs = detect_sync_logoff(
            &self.logoff_observations,
            integrity_cfg.logoff_delta_seconds,
            integrity_cfg.logoff_min_occasions,
        );
        let trades = std::mem::take(&mut self.trades);
        RunOutput {
            log: self.log,
            outcomes: self.outcomes,
            failed: self.failed,
            declined_requests: self.declined,
            market: MarketRecord {
                seed: self.scenario.seed,
                trades: coalesce_groups(trades),
            },
            conservation: self.conservation,
            integrity: IntegrityFindings {
                collusion_groups,
                sync_logoff_pairs,
                gps_flags: self.gps_flags,
                revenue_mismatches: self.revenue_mismatches,
            },
            no_bid_fee_count: self.no_bid_fee_count,
        }
    }
}

/// Post-run utilization scan: no driver holds overlapping ride spans.
pub fn ride_spans_overlap(spans: &[(Tick, Tick)]) -> bool {
    let mut sorted = spans.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[1].0 < w[0].1)
}
