//! Shared test oracles, independent of the library's computation paths:
//! an expression-tree evaluator for the payoff formulas, a second
//! property enumerator, predicate checkers for the detectors, and a
//! maximum-matching oracle for logoff co-occurrences.

#![allow(dead_code)]

use std::collections::BTreeSet;

use farebid_core::ids::Tick;
use farebid_core::integrity::{BidObservation, FlaggedGroup};
use farebid_core::money::Money;
use farebid_core::params::MechanismType;
use farebid_core::verify::{Action, Profile, SmallInstance};

// ---------------------------------------------------------------------
// Expression-tree payoff oracle
// ---------------------------------------------------------------------

/// Minimal expression AST mirroring the payoff formulas' min/max trees.
#[derive(Clone, Debug)]
pub enum Expr {
    Num(f64),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Min(items) => items.iter().map(Expr::eval).fold(f64::INFINITY, f64::min),
            Expr::Max(items) => items
                .iter()
                .map(Expr::eval)
                .fold(f64::NEG_INFINITY, f64::max),
            Expr::Sub(a, b) => a.eval() - b.eval(),
            Expr::Mul(a, b) => a.eval() * b.eval(),
        }
    }
}

fn num(m: Money) -> Expr {
    Expr::Num(m.minor() as f64)
}

/// All inputs the payoff formulas consume, in one bundle.
#[derive(Clone, Copy, Debug)]
pub struct OracleInputs {
    pub cap: Money,      // C_n (T1/T4) or the priority bound (T3/T5)
    pub winning_bid: Money,
    pub base: Money,
    pub standard: Money,
    pub driver_fee: Money,
    pub platform_fixed: Money,
    pub platform_variable: Money,
    pub platform_opportunity: Money,
    pub beta_ob: f64,
    pub beta_lb: f64,
    pub beta_id: f64,
    pub beta_idw: f64,
    pub driver_variable: Money,
    pub driver_fixed: Money,
    pub driver_opportunity: Money,
    pub beta_od: f64,
    pub beta_ld: f64,
}

/// Clearing expression per type; returns the price tree plus whether
/// the T1/T4 cap covers the bid/base floor (the feasible branch).
pub fn oracle_clearing(mechanism: MechanismType, inputs: &OracleInputs) -> (f64, bool) {
    let zero = Expr::Num(0.0);
    match mechanism {
        MechanismType::T1 | MechanismType::T4 => {
            let feasible =
                inputs.cap >= inputs.winning_bid.max(inputs.base);
            let floor = Expr::Max(vec![zero, num(inputs.winning_bid), num(inputs.base)]);
            let tree = if feasible {
                Expr::Min(vec![num(inputs.cap), floor])
            } else {
                floor
            };
            (tree.eval(), feasible)
        }
        MechanismType::T2 => {
            let tree = Expr::Min(vec![
                num(inputs.standard),
                Expr::Max(vec![num(inputs.base), zero, num(inputs.winning_bid)]),
            ]);
            (tree.eval(), true)
        }
        MechanismType::T3 | MechanismType::T5 => {
            let tree = Expr::Min(vec![
                num(inputs.cap),
                Expr::Max(vec![
                    num(inputs.winning_bid),
                    num(inputs.standard),
                    zero,
                    num(inputs.base),
                ]),
            ]);
            (tree.eval(), true)
        }
    }
}

/// Platform payoff tree: the bid-probability-weighted in-ride margin
/// less the weighted opportunity profit, floored at zero.
pub fn oracle_platform_payoff(clearing: f64, inputs: &OracleInputs) -> f64 {
    let margin = Expr::Sub(
        Box::new(Expr::Sub(
            Box::new(Expr::Sub(
                Box::new(Expr::Num(clearing)),
                Box::new(num(inputs.driver_fee)),
            )),
            Box::new(num(inputs.platform_fixed)),
        )),
        Box::new(num(inputs.platform_variable)),
    );
    let opportunity = Expr::Mul(
        Box::new(Expr::Mul(
            Box::new(Expr::Num(inputs.beta_ob)),
            Box::new(Expr::Num(inputs.beta_lb)),
        )),
        Box::new(num(inputs.platform_opportunity)),
    );
    Expr::Max(vec![
        Expr::Sub(
            Box::new(Expr::Mul(Box::new(Expr::Num(inputs.beta_id)), Box::new(margin))),
            Box::new(opportunity),
        ),
        Expr::Num(0.0),
    ])
    .eval()
}

/// Driver payoff tree, with the zero-fee membership guard.
pub fn oracle_driver_payoff(inputs: &OracleInputs) -> f64 {
    if inputs.driver_fee <= Money::ZERO {
        return 0.0;
    }
    let inner = Expr::Sub(
        Box::new(Expr::Sub(
            Box::new(Expr::Sub(
                Box::new(num(inputs.driver_fee)),
                Box::new(num(inputs.driver_variable)),
            )),
            Box::new(num(inputs.driver_fixed)),
        )),
        Box::new(Expr::Mul(
            Box::new(Expr::Mul(
                Box::new(Expr::Num(inputs.beta_od)),
                Box::new(Expr::Num(inputs.beta_ld)),
            )),
            Box::new(num(inputs.driver_opportunity)),
        )),
    );
    Expr::Max(vec![
        Expr::Mul(
            Box::new(Expr::Mul(
                Box::new(Expr::Num(inputs.beta_id)),
                Box::new(Expr::Num(inputs.beta_idw)),
            )),
            Box::new(inner),
        ),
        Expr::Num(0.0),
    ])
    .eval()
}

pub fn round_half_away(value: f64) -> i64 {
    if value >= 0.0 {
        (value + 0.5).floor() as i64
    } else {
        (value - 0.5).ceil() as i64
    }
}

// ---------------------------------------------------------------------
// Second property enumerator (independent of verify::check_properties)
// ---------------------------------------------------------------------

/// The comparable core of a property report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreReport {
    pub ir_buyer: bool,
    pub ir_seller: bool,
    pub sbb: bool,
    pub dsic_gap: i64,
    pub pareto: bool,
    pub welfare_realized: i64,
    pub welfare_max: i64,
    pub pure_nash: BTreeSet<Profile>,
    pub unique_pure_nash: bool,
}

pub fn core_of(report: &farebid_core::verify::PropertyReport) -> CoreReport {
    CoreReport {
        ir_buyer: report.ir_buyer.pass,
        ir_seller: report.ir_seller.pass,
        sbb: report.sbb.pass,
        dsic_gap: report.dsic_gap.minor(),
        pareto: report.pareto.pass,
        welfare_realized: report.welfare_realized.minor(),
        welfare_max: report.welfare_max.minor(),
        pure_nash: report.pure_nash.iter().cloned().collect(),
        unique_pure_nash: report.unique_pure_nash,
    }
}

/// Fraction application with half-up rounding, reimplemented for the
/// oracle path on an integer rational basis.
fn oracle_fraction(amount: i64, fraction: f64) -> i64 {
    let scaled = (fraction * 1e9).round() as i128;
    let numerator = amount as i128 * scaled;
    let denominator = 1_000_000_000i128;
    let quotient = numerator / denominator;
    let remainder = numerator % denominator;
    if 2 * remainder.abs() >= denominator {
        (quotient + numerator.signum()) as i64
    } else {
        quotient as i64
    }
}

struct OracleGame<'a> {
    instance: &'a SmallInstance,
}

impl<'a> OracleGame<'a> {
    fn actions(&self, driver: usize) -> Vec<Action> {
        let mut actions: Vec<Action> = (0..self.instance.drivers[driver].levels.len())
            .map(Some)
            .collect();
        if self.instance.no_bid_allowed {
            actions.push(None);
        }
        actions
    }

    /// Mixed-radix enumeration of all driver profiles.
    fn all_profiles(&self) -> Vec<Profile> {
        let n = self.instance.drivers.len();
        let radices: Vec<usize> = (0..n).map(|d| self.actions(d).len()).collect();
        let total: usize = radices.iter().product();
        let mut out = Vec::with_capacity(total);
        for mut code in 0..total {
            let mut profile = Vec::with_capacity(n);
            for (d, radix) in radices.iter().enumerate() {
                let idx = code % radix;
                code /= radix;
                profile.push(self.actions(d)[idx]);
            }
            out.push(profile);
        }
        out
    }

    fn fee_at(&self, price: i64) -> i64 {
        let taxes = oracle_fraction(price, self.instance.economics.taxes_rate);
        let net = price - taxes;
        oracle_fraction(net, self.instance.economics.blackcar_fraction)
            .min(oracle_fraction(net, self.instance.economics.payout_fraction))
    }

    fn declaration_admissible(&self, price: i64) -> bool {
        let inst = self.instance;
        let base_floor = inst.base_price.max(0);
        match inst.mechanism {
            MechanismType::T1 => price > base_floor,
            MechanismType::T2 => price > inst.base_price && price <= inst.standard_price,
            MechanismType::T3 => price > inst.standard_price,
            MechanismType::T4 => {
                let low = oracle_fraction(inst.standard_price, 0.8);
                let high = oracle_fraction(inst.standard_price, 1.2);
                price >= low && price <= high && price > base_floor
            }
            MechanismType::T5 => price > base_floor,
        }
    }

    fn truthful_declaration(&self) -> Option<i64> {
        let inst = self.instance;
        let v = inst.customer.valuation;
        match inst.mechanism {
            MechanismType::T1 => (v > inst.base_price.max(0)).then_some(v),
            MechanismType::T2 => (v > inst.standard_price).then_some(inst.standard_price),
            MechanismType::T3 | MechanismType::T5 => {
                self.declaration_admissible(v).then_some(v)
            }
            MechanismType::T4 => {
                let low = oracle_fraction(inst.standard_price, 0.8);
                let high = oracle_fraction(inst.standard_price, 1.2);
                let clamped = v.clamp(low, high);
                (v >= low && self.declaration_admissible(clamped)).then_some(clamped)
            }
        }
    }

    fn declarations(&self) -> Vec<Option<i64>> {
        let mut set: BTreeSet<i64> = self
            .instance
            .drivers
            .iter()
            .flat_map(|d| d.levels.iter().copied())
            .collect();
        if let Some(t) = self.truthful_declaration() {
            set.insert(t);
        }
        let mut out: Vec<Option<i64>> = set
            .into_iter()
            .filter(|p| self.declaration_admissible(*p))
            .map(Some)
            .collect();
        out.push(None);
        out
    }

    fn bid_admissible(&self, price: i64, declaration: i64) -> bool {
        let inst = self.instance;
        match inst.mechanism {
            MechanismType::T1 => price > inst.base_price,
            MechanismType::T2 | MechanismType::T3 | MechanismType::T5 => {
                price >= inst.base_price && price <= declaration
            }
            MechanismType::T4 => {
                let low = oracle_fraction(inst.standard_price, 0.8);
                let high = oracle_fraction(inst.standard_price, 1.2);
                price > inst.base_price && price >= low && price <= high
            }
        }
    }

    /// Utilities (buyer, drivers.., platform) of one profile, via the
    /// expression-tree clearing oracle.
    fn utilities(&self, declaration: Option<i64>, profile: &[Action]) -> Vec<i64> {
        let inst = self.instance;
        let n = inst.drivers.len();
        let mut utilities = vec![0i64; n + 2];
        let Some(declaration) = declaration else {
            return utilities;
        };

        let mut bids: Vec<(usize, i64)> = Vec::new();
        for (i, action) in profile.iter().enumerate() {
            match action {
                Some(level) => {
                    let price = inst.drivers[i].levels[*level];
                    if self.bid_admissible(price, declaration) {
                        bids.push((i, price));
                    }
                }
                None => {
                    if inst.mechanism != MechanismType::T1 && inst.no_bid_fee > 0 {
                        utilities[1 + i] -= inst.no_bid_fee;
                    }
                }
            }
        }
        let candidates: Vec<&(usize, i64)> = match inst.mechanism {
            MechanismType::T5 => bids.iter().filter(|(_, p)| *p < declaration).collect(),
            _ => bids.iter().collect(),
        };
        let winner = candidates.into_iter().min_by(|a, b| {
            let price = match inst.mechanism {
                MechanismType::T5 => b.1.cmp(&a.1),
                _ => a.1.cmp(&b.1),
            };
            let da = &inst.drivers[a.0];
            let db = &inst.drivers[b.0];
            price
                .then(da.eta_seconds.cmp(&db.eta_seconds))
                .then(db.quality.partial_cmp(&da.quality).expect("finite"))
                .then(a.0.cmp(&b.0))
        });
        let Some(&(winner, winning_bid)) = winner else {
            return utilities;
        };

        let oracle_inputs = OracleInputs {
            cap: Money::from_minor(declaration),
            winning_bid: Money::from_minor(winning_bid),
            base: Money::from_minor(inst.base_price),
            standard: Money::from_minor(if inst.mechanism == MechanismType::T2 {
                declaration
            } else {
                inst.standard_price
            }),
            driver_fee: Money::ZERO,
            platform_fixed: Money::ZERO,
            platform_variable: Money::ZERO,
            platform_opportunity: Money::ZERO,
            beta_ob: 0.0,
            beta_lb: 0.0,
            beta_id: 1.0,
            beta_idw: 1.0,
            driver_variable: Money::ZERO,
            driver_fixed: Money::ZERO,
            driver_opportunity: Money::ZERO,
            beta_od: 0.0,
            beta_ld: 0.0,
        };
        let (clearing, feasible) = oracle_clearing(inst.mechanism, &oracle_inputs);
        if !feasible {
            return utilities;
        }
        let clearing = clearing as i64;
        let fee = self.fee_at(clearing);
        let taxes = oracle_fraction(clearing, inst.economics.taxes_rate);
        utilities[0] = inst.customer.valuation - clearing;
        utilities[1 + winner] +=
            fee - inst.drivers[winner].cost_variable - inst.drivers[winner].cost_fixed;
        utilities[n + 1] =
            clearing - fee - taxes - inst.economics.beta_f - inst.economics.beta_v;
        utilities
    }

    fn truthful_action(&self, driver: usize) -> Action {
        let inst = self.instance;
        let cost = inst.drivers[driver].cost_variable + inst.drivers[driver].cost_fixed;
        let mut indexed: Vec<(usize, i64)> =
            inst.drivers[driver].levels.iter().copied().enumerate().collect();
        indexed.sort_by_key(|(_, p)| *p);
        for (idx, price) in &indexed {
            if self.fee_at(*price) >= cost {
                return Some(*idx);
            }
        }
        if inst.no_bid_allowed {
            None
        } else {
            indexed.last().map(|(idx, _)| *idx)
        }
    }
}

/// Independent re-derivation of the comparable property report.
pub fn oracle_check_properties(instance: &SmallInstance) -> CoreReport {
    let game = OracleGame { instance };
    let n = instance.drivers.len();
    let profiles = game.all_profiles();
    let declarations = game.declarations();
    let truth = game.truthful_declaration();
    let truthful_profile: Profile = (0..n).map(|d| game.truthful_action(d)).collect();

    let buyer_can_declare = declarations.iter().any(Option::is_some);
    let ir_buyer = !buyer_can_declare
        || declarations.iter().filter(|d| d.is_some()).any(|d| {
            profiles.iter().all(|p| game.utilities(*d, p)[0] >= 0)
        });

    let ir_seller = (0..n).all(|driver| {
        game.actions(driver).into_iter().any(|action| {
            declarations.iter().all(|d| {
                profiles
                    .iter()
                    .filter(|p| p[driver] == action)
                    .all(|p| game.utilities(*d, p)[1 + driver] >= 0)
            })
        })
    });

    // SBB re-check: on every cleared outcome, the customer's payment
    // splits exactly into fee, taxes and a non-negative platform
    // residual; no external party appears.
    let mut sbb = true;
    'outer: for d in &declarations {
        for p in &profiles {
            if winner_of(&game, *d, p).is_some() {
                let utilities = game.utilities(*d, p);
                let clearing = instance.customer.valuation - utilities[0];
                let fee = game.fee_at(clearing);
                let taxes = oracle_fraction(clearing, instance.economics.taxes_rate);
                let retention = clearing - fee - taxes;
                if retention < 0 || retention + fee + taxes != clearing {
                    sbb = false;
                    break 'outer;
                }
            }
        }
    }

    let mut dsic_gap = 0i64;
    for rivals in &profiles {
        let truthful_u = game.utilities(truth, rivals)[0];
        let best = declarations
            .iter()
            .map(|d| game.utilities(*d, rivals)[0])
            .max()
            .unwrap_or(0);
        dsic_gap = dsic_gap.max(best - truthful_u);
    }
    for driver in 0..n {
        for d in &declarations {
            for profile in &profiles {
                if profile[driver] != truthful_profile[driver] {
                    continue;
                }
                let truthful_u = game.utilities(*d, profile)[1 + driver];
                let best = game
                    .actions(driver)
                    .into_iter()
                    .map(|action| {
                        let mut deviated = profile.clone();
                        deviated[driver] = action;
                        game.utilities(*d, &deviated)[1 + driver]
                    })
                    .max()
                    .unwrap_or(0);
                dsic_gap = dsic_gap.max(best - truthful_u);
            }
        }
    }

    // Pareto over grid allocations, fee transfers aside.
    let realized = game.utilities(truth, &truthful_profile);
    let realized_winner = winner_of(&game, truth, &truthful_profile);
    let realized_clearing = instance.customer.valuation - realized[0];
    let mut prices: BTreeSet<i64> = instance
        .drivers
        .iter()
        .flat_map(|d| d.levels.iter().copied())
        .collect();
    prices.insert(instance.standard_price);
    prices.insert(instance.base_price);
    if let Some(t) = truth {
        prices.insert(t);
    }
    let realized_alloc = alloc_utilities(instance, &game, realized_winner, realized_clearing);
    let mut pareto = true;
    let mut alternatives: Vec<(Option<usize>, i64)> = vec![(None, 0)];
    for driver in 0..n {
        for price in &prices {
            alternatives.push((Some(driver), *price));
        }
    }
    for (server, price) in alternatives {
        let candidate = alloc_utilities(instance, &game, server, price);
        let weakly = candidate
            .iter()
            .zip(realized_alloc.iter())
            .all(|(c, r)| c >= r);
        let strictly = candidate
            .iter()
            .zip(realized_alloc.iter())
            .any(|(c, r)| c > r);
        if weakly && strictly {
            pareto = false;
            break;
        }
    }

    let welfare = |server: Option<usize>| -> i64 {
        match server {
            Some(driver) => {
                instance.customer.valuation
                    - instance.drivers[driver].cost_variable
                    - instance.drivers[driver].cost_fixed
                    - instance.economics.beta_f
                    - instance.economics.beta_v
            }
            None => 0,
        }
    };
    let welfare_realized = welfare(winner_of(&game, truth, &truthful_profile));
    let welfare_max = (0..n)
        .map(|d| welfare(Some(d)))
        .chain(std::iter::once(0))
        .max()
        .expect("candidates");

    let mut pure_nash: BTreeSet<Profile> = BTreeSet::new();
    for profile in &profiles {
        let stable = (0..n).all(|driver| {
            let current = game.utilities(truth, profile)[1 + driver];
            game.actions(driver).into_iter().all(|action| {
                let mut deviated = profile.clone();
                deviated[driver] = action;
                game.utilities(truth, &deviated)[1 + driver] <= current
            })
        });
        if stable {
            pure_nash.insert(profile.clone());
        }
    }
    let unique_pure_nash = pure_nash.len() == 1;

    CoreReport {
        ir_buyer,
        ir_seller,
        sbb,
        dsic_gap,
        pareto,
        welfare_realized,
        welfare_max,
        pure_nash,
        unique_pure_nash,
    }
}

fn winner_of(game: &OracleGame, declaration: Option<i64>, profile: &[Action]) -> Option<usize> {
    let inst = game.instance;
    let declaration = declaration?;
    let mut bids: Vec<(usize, i64)> = Vec::new();
    for (i, action) in profile.iter().enumerate() {
        if let Some(level) = action {
            let price = inst.drivers[i].levels[*level];
            if game.bid_admissible(price, declaration) {
                bids.push((i, price));
            }
        }
    }
    let candidates: Vec<(usize, i64)> = match inst.mechanism {
        MechanismType::T5 => bids.into_iter().filter(|(_, p)| *p < declaration).collect(),
        _ => bids,
    };
    let best = candidates.into_iter().min_by(|a, b| {
        let price = match inst.mechanism {
            MechanismType::T5 => b.1.cmp(&a.1),
            _ => a.1.cmp(&b.1),
        };
        let da = &inst.drivers[a.0];
        let db = &inst.drivers[b.0];
        price
            .then(da.eta_seconds.cmp(&db.eta_seconds))
            .then(db.quality.partial_cmp(&da.quality).expect("finite"))
            .then(a.0.cmp(&b.0))
    })?;
    // Apply the clearing feasibility gate.
    let inputs = OracleInputs {
        cap: Money::from_minor(declaration),
        winning_bid: Money::from_minor(best.1),
        base: Money::from_minor(inst.base_price),
        standard: Money::from_minor(if inst.mechanism == MechanismType::T2 {
            declaration
        } else {
            inst.standard_price
        }),
        driver_fee: Money::ZERO,
        platform_fixed: Money::ZERO,
        platform_variable: Money::ZERO,
        platform_opportunity: Money::ZERO,
        beta_ob: 0.0,
        beta_lb: 0.0,
        beta_id: 1.0,
        beta_idw: 1.0,
        driver_variable: Money::ZERO,
        driver_fixed: Money::ZERO,
        driver_opportunity: Money::ZERO,
        beta_od: 0.0,
        beta_ld: 0.0,
    };
    let (_, feasible) = oracle_clearing(inst.mechanism, &inputs);
    feasible.then_some(best.0)
}

fn alloc_utilities(
    instance: &SmallInstance,
    game: &OracleGame,
    server: Option<usize>,
    price: i64,
) -> Vec<i64> {
    let n = instance.drivers.len();
    let mut utilities = vec![0i64; n + 2];
    if let Some(driver) = server {
        let fee = game.fee_at(price);
        let taxes = oracle_fraction(price, instance.economics.taxes_rate);
        utilities[0] = instance.customer.valuation - price;
        utilities[1 + driver] =
            fee - instance.drivers[driver].cost_variable - instance.drivers[driver].cost_fixed;
        utilities[n + 1] =
            price - fee - taxes - instance.economics.beta_f - instance.economics.beta_v;
    }
    utilities
}

// ---------------------------------------------------------------------
// Seeded instance family for the dual-enumerator sweep
// ---------------------------------------------------------------------

/// Random small instance within the sweep bounds (at most 3 drivers,
/// at most 5 levels each).
pub fn random_instance<R: rand::Rng>(mechanism: MechanismType, rng: &mut R) -> SmallInstance {
    use farebid_core::verify::{InstanceCustomer, InstanceDriver, InstanceEconomics};
    let standard = rng.random_range(800..=1400);
    let base = rng.random_range(200..standard - 100);
    let valuation = rng.random_range(600..=2200);
    let driver_count = rng.random_range(2..=3);
    let drivers = (0..driver_count)
        .map(|_| {
            let level_count = rng.random_range(1..=5usize);
            let mut levels: BTreeSet<i64> = BTreeSet::new();
            while levels.len() < level_count {
                levels.insert(rng.random_range(base.max(100) - 50..=standard + 600));
            }
            InstanceDriver {
                cost_variable: rng.random_range(100..=700),
                cost_fixed: rng.random_range(50..=300),
                eta_seconds: rng.random_range(30..=600),
                quality: (rng.random_range(0..=10) as f64) / 10.0,
                levels: levels.into_iter().collect(),
            }
        })
        .collect();
    SmallInstance {
        format_version: farebid_core::verify::INSTANCE_FORMAT_VERSION,
        mechanism,
        standard_price: standard,
        base_price: base,
        no_bid_allowed: rng.random_bool(0.5),
        no_bid_fee: *[0, 25, 50].get(rng.random_range(0..3)).expect("index"),
        customer: InstanceCustomer { valuation },
        economics: InstanceEconomics {
            payout_fraction: *[0.75, 0.80, 0.90].get(rng.random_range(0..3)).expect("index"),
            blackcar_fraction: *[0.78, 0.85, 0.95].get(rng.random_range(0..3)).expect("index"),
            taxes_rate: *[0.0, 0.05, 0.10].get(rng.random_range(0..3)).expect("index"),
            beta_f: rng.random_range(0..=80),
            beta_v: rng.random_range(0..=80),
        },
        drivers,
    }
}

// ---------------------------------------------------------------------
// Collusion predicate checker (detector soundness oracle)
// ---------------------------------------------------------------------

/// Literal restatement of the flagging predicate: same neighborhood,
/// group size >= 2, and at least `min_customers` distinct customers
/// inside one `window` on which every member bid within the band of
/// that customer's median.
pub fn group_satisfies_predicate(
    observations: &[BidObservation],
    group: &FlaggedGroup,
    band: f64,
    min_customers: usize,
    window_seconds: u64,
) -> bool {
    if group.drivers.len() < 2 {
        return false;
    }
    let in_neighborhood: Vec<&BidObservation> = observations
        .iter()
        .filter(|o| o.neighborhood == group.neighborhood)
        .collect();
    // For every customer: the median over all bids, and whether every
    // group member bid inside the band.
    let customers: BTreeSet<_> = in_neighborhood.iter().map(|o| o.customer).collect();
    let mut qualifying: Vec<(Tick, farebid_core::ids::CustomerId)> = Vec::new();
    for customer in customers {
        let bids: Vec<&&BidObservation> = in_neighborhood
            .iter()
            .filter(|o| o.customer == customer)
            .collect();
        let mut prices: Vec<i64> = bids.iter().map(|o| o.price.minor()).collect();
        prices.sort_unstable();
        let median = if prices.len() % 2 == 1 {
            prices[prices.len() / 2] as f64
        } else {
            (prices[prices.len() / 2 - 1] as f64 + prices[prices.len() / 2] as f64) / 2.0
        };
        let all_in_band = group.drivers.iter().all(|driver| {
            bids.iter().any(|o| {
                o.driver == *driver && (o.price.minor() as f64 - median).abs() <= band * median
            })
        });
        if all_in_band {
            let first = bids.iter().map(|o| o.tick).min().expect("non-empty");
            qualifying.push((first, customer));
        }
    }
    qualifying.sort();
    // Enough qualifying customers inside some window?
    qualifying.iter().enumerate().any(|(i, (start, _))| {
        qualifying[i..]
            .iter()
            .take_while(|(t, _)| t.0 <= start.0 + window_seconds)
            .count()
            >= min_customers
    })
}

// ---------------------------------------------------------------------
// Maximum-matching oracle for synchronized logoffs
// ---------------------------------------------------------------------

/// Maximum bipartite matching between two sorted event-time lists with
/// a |a - b| <= delta edge rule, via augmenting paths.
pub fn max_cooccurrence(a: &[u64], b: &[u64], delta: u64) -> usize {
    let mut match_of_b: Vec<Option<usize>> = vec![None; b.len()];
    let mut matched = 0;
    for (i, &ta) in a.iter().enumerate() {
        let mut visited = vec![false; b.len()];
        if augment(i, ta, a, b, delta, &mut match_of_b, &mut visited) {
            matched += 1;
        }
    }
    matched
}

fn augment(
    i: usize,
    ta: u64,
    a: &[u64],
    b: &[u64],
    delta: u64,
    match_of_b: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for (j, &tb) in b.iter().enumerate() {
        if visited[j] || ta.abs_diff(tb) > delta {
            continue;
        }
        visited[j] = true;
        let free = match match_of_b[j] {
            None => true,
            Some(prev) => augment(prev, a[prev], a, b, delta, match_of_b, visited),
        };
        if free {
            match_of_b[j] = Some(i);
            return true;
        }
    }
    false
}
