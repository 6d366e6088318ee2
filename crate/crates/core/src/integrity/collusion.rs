//! Bid-band and synchronized-logoff collusion detectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{CustomerId, DriverId, Tick};
use crate::money::Money;

/// One driver bid as the detectors see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidObservation {
    pub driver: DriverId,
    pub customer: CustomerId,
    pub neighborhood: u32,
    pub tick: Tick,
    pub price: Money,
}

/// One logoff event as the detectors see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogoffObservation {
    pub driver: DriverId,
    pub tick: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollusionConfig {
    /// Half-width of the suspicious band around the per-customer median.
    pub band: f64,
    /// Minimum number of distinct in-band customers shared by a group.
    pub min_customers: usize,
    /// Time frame the shared customers must fall into, in seconds.
    pub window_seconds: u64,
}

impl Default for CollusionConfig {
    fn default() -> Self {
        CollusionConfig {
            band: 0.10,
            min_customers: 5,
            window_seconds: 24 * 60 * 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerEvidence {
    pub customer: CustomerId,
    pub median: f64,
    /// Bids by the flagged drivers on this customer.
    pub bids: Vec<(DriverId, Money)>,
}

/// A maximal same-neighborhood driver group whose bids sit inside the
/// band around the per-customer median on enough shared customers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedGroup {
    pub neighborhood: u32,
    pub drivers: BTreeSet<DriverId>,
    pub customers: BTreeSet<CustomerId>,
    pub evidence: Vec<CustomerEvidence>,
}

/// Median bid in minor units; even counts average the two middles.
fn median_minor(prices: &[Money]) -> f64 {
    let mut sorted: Vec<i64> = prices.iter().map(|p| p.minor()).collect();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

fn in_band(price: Money, median: f64, band: f64) -> bool {
    (price.minor() as f64 - median).abs() <= band * median
}

struct CustomerBids {
    first_tick: Tick,
    median: f64,
    in_band_drivers: BTreeSet<DriverId>,
    bids: Vec<(DriverId, Money)>,
}

/// Flags every maximal group (size >= 2) of same-neighborhood drivers
/// whose bids fall within the band of the per-customer median on at
/// least `min_customers` distinct customers inside the time window.
pub fn detect_bid_band_collusion(
    observations: &[BidObservation],
    config: &CollusionConfig,
) -> Vec<FlaggedGroup> {
    // Per neighborhood, per customer: median over all bids for that
    // customer and the set of drivers bidding inside the band.
    let mut by_neighborhood: BTreeMap<u32, BTreeMap<CustomerId, Vec<&BidObservation>>> =
        BTreeMap::new();
    for obs in observations {
        by_neighborhood
            .entry(obs.neighborhood)
            .or_default()
            .entry(obs.customer)
            .or_default()
            .push(obs);
    }

    let mut flagged: Vec<FlaggedGroup> = Vec::new();
    for (&neighborhood, customers) in &by_neighborhood {
        let mut summaries: Vec<(CustomerId, CustomerBids)> = customers
            .iter()
            .map(|(&customer, obs)| {
                let prices: Vec<Money> = obs.iter().map(|o| o.price).collect();
                let median = median_minor(&prices);
                let mut in_band_drivers = BTreeSet::new();
                let mut bids = Vec::new();
                for o in obs {
                    bids.push((o.driver, o.price));
                    if in_band(o.price, median, config.band) {
                        in_band_drivers.insert(o.driver);
                    }
                }
                let first_tick = obs.iter().map(|o| o.tick).min().unwrap_or(Tick(0));
                (
                    customer,
                    CustomerBids {
                        first_tick,
                        median,
                        in_band_drivers,
                        bids,
                    },
                )
            })
            .collect();
        summaries.sort_by_key(|(customer, s)| (s.first_tick, *customer));

        // Slide a window anchored at every customer; any qualifying set
        // of customers within the time frame is contained in the window
        // anchored at its earliest member. An anchor that reaches no
        // customer beyond the previously mined window is a subset of it
        // and is skipped.
        let mut previous_last: Option<usize> = None;
        for anchor in 0..summaries.len() {
            let t0 = summaries[anchor].1.first_tick;
            let horizon = t0.plus(config.window_seconds);
            let included = summaries[anchor..]
                .iter()
                .take_while(|(_, s)| s.first_tick <= horizon)
                .count();
            let last = anchor + included - 1;
            if previous_last.is_some_and(|prev| last <= prev) {
                continue;
            }
            previous_last = Some(last);
            let in_window: Vec<&(CustomerId, CustomerBids)> =
                summaries[anchor..=last].iter().collect();
            if in_window.len() < config.min_customers {
                continue;
            }
            let mut support: BTreeMap<DriverId, BTreeSet<CustomerId>> = BTreeMap::new();
            for (customer, s) in &in_window {
                for driver in &s.in_band_drivers {
                    support.entry(*driver).or_default().insert(*customer);
                }
            }
            for (drivers, shared) in maximal_frequent_groups(&support, config.min_customers) {
                merge_group(&mut flagged, neighborhood, drivers, shared, &in_window);
            }
        }
    }

    // Drop groups strictly contained in a flagged superset from another
    // window; the superset is the stronger finding.
    let mut keep = vec![true; flagged.len()];
    for i in 0..flagged.len() {
        for j in 0..flagged.len() {
            if i != j
                && keep[i]
                && flagged[i].neighborhood == flagged[j].neighborhood
                && flagged[i].drivers.is_subset(&flagged[j].drivers)
                && flagged[i].drivers.len() < flagged[j].drivers.len()
            {
                keep[i] = false;
            }
        }
    }
    flagged
        .into_iter()
        .zip(keep)
        .filter_map(|(group, kept)| kept.then_some(group))
        .collect()
}

fn merge_group(
    flagged: &mut Vec<FlaggedGroup>,
    neighborhood: u32,
    drivers: BTreeSet<DriverId>,
    shared: BTreeSet<CustomerId>,
    window: &[&(CustomerId, CustomerBids)],
) {
    if let Some(existing) = flagged
        .iter_mut()
        .find(|g| g.neighborhood == neighborhood && g.drivers == drivers)
    {
        if shared.len() <= existing.customers.len() {
            return;
        }
        flagged.retain(|g| !(g.neighborhood == neighborhood && g.drivers == drivers));
    }
    let evidence: Vec<CustomerEvidence> = window
        .iter()
        .filter(|(customer, _)| shared.contains(customer))
        .map(|(customer, s)| CustomerEvidence {
            customer: *customer,
            median: s.median,
            bids: s
                .bids
                .iter()
                .filter(|(driver, _)| drivers.contains(driver))
                .copied()
                .collect(),
        })
        .collect();
    flagged.push(FlaggedGroup {
        neighborhood,
        drivers,
        customers: shared,
        evidence,
    });
}

/// Enumeration of maximal driver groups (size >= 2) whose shared
/// in-band customer set has at least `min_support` members.
///
/// Walks closed groups only: every extension is immediately closed over
/// all drivers that support the same customer set, and a closed group
/// is generated exactly once, from its smallest non-member index. This
/// keeps dense honest logs tractable where subset-by-subset search
/// blows up.
fn maximal_frequent_groups(
    support: &BTreeMap<DriverId, BTreeSet<CustomerId>>,
    min_support: usize,
) -> Vec<(BTreeSet<DriverId>, BTreeSet<CustomerId>)> {
    let candidates: Vec<(DriverId, &BTreeSet<CustomerId>)> = support
        .iter()
        .filter(|(_, customers)| customers.len() >= min_support)
        .map(|(d, c)| (*d, c))
        .collect();
    let mut out = Vec::new();
    close_and_extend(&candidates, min_support, &BTreeSet::new(), None, 0, &mut out);
    out
}

fn close_and_extend(
    candidates: &[(DriverId, &BTreeSet<CustomerId>)],
    min_support: usize,
    group: &BTreeSet<usize>,
    shared: Option<&BTreeSet<CustomerId>>,
    start: usize,
    out: &mut Vec<(BTreeSet<DriverId>, BTreeSet<CustomerId>)>,
) {
    // Maximal when no outside candidate keeps the support at threshold.
    let extendable = candidates.iter().enumerate().any(|(idx, (_, customers))| {
        !group.contains(&idx)
            && match shared {
                Some(s) => s.intersection(customers).count() >= min_support,
                None => customers.len() >= min_support,
            }
    });
    if !extendable {
        if group.len() >= 2 {
            out.push((
                group.iter().map(|idx| candidates[*idx].0).collect(),
                shared.expect("groups of size >= 2 carry a support set").clone(),
            ));
        }
        return;
    }
    for idx in start..candidates.len() {
        if group.contains(&idx) {
            continue;
        }
        let merged: BTreeSet<CustomerId> = match shared {
            Some(s) => s.intersection(candidates[idx].1).copied().collect(),
            None => candidates[idx].1.clone(),
        };
        if merged.len() < min_support {
            continue;
        }
        // Closure: every candidate in-band on all of `merged` belongs.
        let closure: BTreeSet<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, (_, customers))| merged.iter().all(|c| customers.contains(c)))
            .map(|(k, _)| k)
            .collect();
        // Canonical parent: a closed group is expanded only from its
        // smallest index outside the current group.
        if closure
            .iter()
            .any(|k| *k < idx && !group.contains(k))
        {
            continue;
        }
        close_and_extend(candidates, min_support, &closure, Some(&merged), idx + 1, out);
    }
}

/// A driver pair flagged for synchronized logoffs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedPair {
    pub drivers: (DriverId, DriverId),
    pub occasions: Vec<(Tick, Tick)>,
}

/// Flags driver pairs whose logoffs co-occur within `delta_seconds` on
/// at least `min_occasions` occasions ("more than two" reads as >= 3).
/// Each logoff event matches at most one of the partner's events.
pub fn detect_sync_logoff(
    observations: &[LogoffObservation],
    delta_seconds: u64,
    min_occasions: usize,
) -> Vec<FlaggedPair> {
    let mut per_driver: BTreeMap<DriverId, Vec<Tick>> = BTreeMap::new();
    for obs in observations {
        per_driver.entry(obs.driver).or_default().push(obs.tick);
    }
    for times in per_driver.values_mut() {
        times.sort_unstable();
    }
    let drivers: Vec<DriverId> = per_driver.keys().copied().collect();
    let mut flagged = Vec::new();
    for i in 0..drivers.len() {
        for j in i + 1..drivers.len() {
            let occasions =
                match_occasions(&per_driver[&drivers[i]], &per_driver[&drivers[j]], delta_seconds);
            if occasions.len() >= min_occasions {
                flagged.push(FlaggedPair {
                    drivers: (drivers[i], drivers[j]),
                    occasions,
                });
            }
        }
    }
    flagged
}

/// Greedy two-pointer matching of sorted event times within `delta`;
/// greedy earliest-first is a maximum matching for interval thresholds.
fn match_occasions(a: &[Tick], b: &[Tick], delta: u64) -> Vec<(Tick, Tick)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (ta, tb) = (a[i].0, b[j].0);
        if ta.abs_diff(tb) <= delta {
            out.push((a[i], b[j]));
            i += 1;
            j += 1;
        } else if ta < tb {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bid(driver: u32, customer: u32, tick: u64, price: i64) -> BidObservation {
        BidObservation {
            driver: DriverId(driver),
            customer: CustomerId(customer),
            neighborhood: 0,
            tick: Tick(tick),
            price: Money::from_minor(price),
        }
    }

    #[test]
    fn planted_group_flagged() {
        let mut obs = Vec::new();
        // Six customers; drivers 1-4 bid within 5% of 1000, drivers 5-8
        // scatter far outside the band.
        for c in 0..6u32 {
            let t = c as u64 * 3600;
            for d in 1..=4u32 {
                obs.push(bid(d, c, t, 1000 + (d as i64 - 2) * 30));
            }
            obs.push(bid(5, c, t, 400));
            obs.push(bid(6, c, t, 1900));
            obs.push(bid(7, c, t, 310));
            obs.push(bid(8, c, t, 2500));
        }
        let config = CollusionConfig {
            min_customers: 5,
            ..Default::default()
        };
        let flagged = detect_bid_band_collusion(&obs, &config);
        assert_eq!(flagged.len(), 1);
        let drivers: Vec<u32> = flagged[0].drivers.iter().map(|d| d.0).collect();
        assert_eq!(drivers, vec![1, 2, 3, 4]);
        assert!(flagged[0].customers.len() >= 5);
        assert!(!flagged[0].evidence.is_empty());
    }

    #[test]
    fn single_driver_never_flagged() {
        let obs: Vec<BidObservation> = (0..10).map(|c| bid(1, c, c as u64 * 60, 1000)).collect();
        assert!(detect_bid_band_collusion(&obs, &CollusionConfig::default()).is_empty());
    }

    #[test]
    fn window_splits_coincidence() {
        // Same pair in-band on 5 customers, but spread over three days.
        let mut obs = Vec::new();
        for c in 0..5u32 {
            let t = c as u64 * 15 * 3600;
            obs.push(bid(1, c, t, 1000));
            obs.push(bid(2, c, t, 1010));
            obs.push(bid(3, c, t, 500));
        }
        let config = CollusionConfig {
            min_customers: 5,
            ..Default::default()
        };
        assert!(detect_bid_band_collusion(&obs, &config).is_empty());
        // Compressed into one day, the same bids are flagged.
        let mut compressed = Vec::new();
        for c in 0..5u32 {
            let t = c as u64 * 3600;
            compressed.push(bid(1, c, t, 1000));
            compressed.push(bid(2, c, t, 1010));
            compressed.push(bid(3, c, t, 500));
        }
        assert_eq!(detect_bid_band_collusion(&compressed, &config).len(), 1);
    }

    fn logoff(driver: u32, tick: u64) -> LogoffObservation {
        LogoffObservation {
            driver: DriverId(driver),
            tick: Tick(tick),
        }
    }

    #[test]
    fn three_co_logoffs_flagged_two_not() {
        let obs = vec![
            logoff(1, 1000),
            logoff(2, 1060),
            logoff(1, 5000),
            logoff(2, 5100),
            logoff(1, 9000),
            logoff(2, 8950),
            logoff(3, 1000),
            logoff(3, 5000),
        ];
        let flagged = detect_sync_logoff(&obs, 120, 3);
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].drivers, (DriverId(1), DriverId(2)));
        assert_eq!(flagged[0].occasions.len(), 3);
    }

    /// Brute force over every driver subset, for cross-checking the
    /// closed-set miner on small inputs.
    fn brute_maximal_groups(
        support: &BTreeMap<DriverId, BTreeSet<CustomerId>>,
        min_support: usize,
    ) -> Vec<BTreeSet<DriverId>> {
        let drivers: Vec<DriverId> = support.keys().copied().collect();
        let n = drivers.len();
        let shared_of = |mask: u32| -> BTreeSet<CustomerId> {
            let mut iter = (0..n).filter(|i| mask & (1 << i) != 0);
            let first = match iter.next() {
                Some(i) => support[&drivers[i]].clone(),
                None => return BTreeSet::new(),
            };
            iter.fold(first, |acc, i| {
                acc.intersection(&support[&drivers[i]]).copied().collect()
            })
        };
        let frequent: Vec<u32> = (1u32..1 << n)
            .filter(|mask| mask.count_ones() >= 2 && shared_of(*mask).len() >= min_support)
            .collect();
        frequent
            .iter()
            .filter(|mask| {
                !frequent
                    .iter()
                    .any(|other| *other != **mask && *other & **mask == **mask)
            })
            .map(|mask| {
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| drivers[i])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn miner_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let drivers = rng.random_range(2..=8u32);
            let customers = rng.random_range(3..=9u32);
            let min_support = rng.random_range(2..=4usize);
            let mut support: BTreeMap<DriverId, BTreeSet<CustomerId>> = BTreeMap::new();
            for d in 0..drivers {
                let mut set = BTreeSet::new();
                for c in 0..customers {
                    if rng.random_bool(0.45) {
                        set.insert(CustomerId(c));
                    }
                }
                if set.len() >= min_support {
                    support.insert(DriverId(d), set);
                }
            }
            let mut mined: Vec<BTreeSet<DriverId>> =
                maximal_frequent_groups(&support, min_support)
                    .into_iter()
                    .map(|(group, _)| group)
                    .collect();
            let mut expected = brute_maximal_groups(&support, min_support);
            mined.sort();
            expected.sort();
            assert_eq!(mined, expected, "support map: {support:?}");
        }
    }

    #[test]
    fn matching_is_one_to_one() {
        // Driver 2 logs off once; three of driver 1's events sit within
        // delta of it, but only one occasion may be counted.
        let obs = vec![
            logoff(1, 1000),
            logoff(1, 1030),
            logoff(1, 1060),
            logoff(2, 1040),
        ];
        assert!(detect_sync_logoff(&obs, 120, 3).is_empty());
        let pairs = detect_sync_logoff(&obs, 120, 1);
        assert_eq!(pairs[0].occasions.len(), 1);
    }
}
