//! Append-only, visibility-tagged event log and the privacy audit.

use serde::{Deserialize, Serialize};

use crate::ids::{CustomerId, DriverId, RideId, Tick};
use crate::mechanisms::{CustomerBid, FailReason};
use crate::money::{Money, Party};
use crate::params::MechanismType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    RideRequested {
        ride: RideId,
        customer: CustomerId,
        mechanism: MechanismType,
    },
    QuoteIssued {
        ride: RideId,
        standard: Money,
        base: Money,
    },
    /// The customer's bid as placed; visible to the customer only.
    CustomerBidPlaced {
        ride: RideId,
        customer: CustomerId,
        bid: CustomerBid,
    },
    DriversSelected {
        ride: RideId,
        drivers: Vec<DriverId>,
        thin_market: bool,
    },
    /// The customer's bid relayed to the selected drivers.
    CustomerBidRelayed {
        ride: RideId,
        bid: CustomerBid,
        drivers: Vec<DriverId>,
    },
    DriverBidSubmitted {
        ride: RideId,
        driver: DriverId,
        price: Money,
    },
    DriverNoBid {
        ride: RideId,
        driver: DriverId,
        exempt: bool,
    },
    NoBidFeeCharged {
        ride: RideId,
        driver: DriverId,
        fee: Money,
    },
    CustomerRevised {
        ride: RideId,
        bid: CustomerBid,
        revision: u8,
        drivers: Vec<DriverId>,
    },
    AuctionFailed {
        ride: RideId,
        reason: FailReason,
    },
    AuctionCancelled {
        ride: RideId,
    },
    Assigned {
        ride: RideId,
        clearing_price: Money,
    },
    WinNotified {
        ride: RideId,
        driver: DriverId,
    },
    FinalPriceNotified {
        ride: RideId,
        customer: CustomerId,
        price: Money,
    },
    PaymentMade {
        ride: RideId,
        customer: CustomerId,
        amount: Money,
    },
    /// Pairwise introduction, only after payment.
    IdentityRevealed {
        ride: RideId,
        customer: CustomerId,
        driver: DriverId,
    },
    DriverArrived {
        ride: RideId,
        driver: DriverId,
        promised: Tick,
        actual: Tick,
    },
    RideStarted {
        ride: RideId,
        boarded_at: Tick,
    },
    GpsSampled {
        ride: RideId,
        lat: f64,
        lon: f64,
    },
    RideCompleted {
        ride: RideId,
        completed_at: Tick,
    },
    Settled {
        ride: RideId,
        payment: Money,
        driver_fee: Money,
        taxes: Money,
        third_party: Money,
        retention: Money,
        fee_clamped: bool,
    },
    DriverLoggedOff {
        driver: DriverId,
    },
    DriverLoggedOn {
        driver: DriverId,
    },
}

/// One log record. The visibility set is fixed at emission and never
/// widened afterward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub tick: Tick,
    pub seq: u64,
    pub kind: EventKind,
    pub visibility: Vec<Party>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<LogEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, tick: Tick, kind: EventKind, mut visibility: Vec<Party>) {
        visibility.sort();
        visibility.dedup();
        let seq = self.events.len() as u64;
        self.events.push(LogEvent {
            tick,
            seq,
            kind,
            visibility,
        });
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line, in emission order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EventLog, serde_json::Error> {
        let mut events = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line)?);
        }
        Ok(EventLog { events })
    }
}

/// A privacy violation found by the audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyViolation {
    pub seq: u64,
    pub rule: PrivacyRule,
    pub offending: Vec<Party>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrivacyRule {
    /// A customer bid reached a driver outside the selected set or
    /// another customer.
    CustomerBidLeak,
    /// A driver's bid reached anyone but the platform and that driver.
    DriverBidLeak,
    /// Identities crossed before payment, to the wrong parties, or for
    /// a driver who was not the assigned primary.
    IdentityRule,
}

/// Scans every event's delivery set against the disclosure rules:
/// customer bids stay inside {platform, the customer, selected
/// drivers}; driver bids stay pairwise; identities cross only after
/// payment and only between the customer and the assigned driver.
pub fn audit_privacy(log: &EventLog) -> Vec<PrivacyViolation> {
    use std::collections::{BTreeMap, BTreeSet};
    let mut selected: BTreeMap<RideId, BTreeSet<DriverId>> = BTreeMap::new();
    let mut owner: BTreeMap<RideId, CustomerId> = BTreeMap::new();
    let mut paid: BTreeSet<RideId> = BTreeSet::new();
    let mut winner: BTreeMap<RideId, DriverId> = BTreeMap::new();
    let mut violations = Vec::new();

    for event in log.events() {
        match &event.kind {
            EventKind::RideRequested { ride, customer, .. } => {
                owner.insert(*ride, *customer);
            }
            EventKind::DriversSelected { ride, drivers, .. } => {
                selected.insert(*ride, drivers.iter().copied().collect());
            }
            EventKind::WinNotified { ride, driver } => {
                winner.insert(*ride, *driver);
            }
            EventKind::PaymentMade { ride, .. } => {
                paid.insert(*ride);
            }
            _ => {}
        }

        match &event.kind {
            EventKind::CustomerBidPlaced { ride, .. }
            | EventKind::CustomerBidRelayed { ride, .. }
            | EventKind::CustomerRevised { ride, .. } => {
                let allowed_drivers = selected.get(ride);
                let offending: Vec<Party> = event
                    .visibility
                    .iter()
                    .filter(|party| match party {
                        Party::Platform => false,
                        Party::Customer(c) => owner.get(ride) != Some(c),
                        Party::Driver(d) => {
                            !allowed_drivers.is_some_and(|set| set.contains(d))
                        }
                        _ => true,
                    })
                    .copied()
                    .collect();
                if !offending.is_empty() {
                    violations.push(PrivacyViolation {
                        seq: event.seq,
                        rule: PrivacyRule::CustomerBidLeak,
                        offending,
                    });
                }
            }
            EventKind::DriverBidSubmitted { driver, .. }
            | EventKind::DriverNoBid { driver, .. } => {
                let offending: Vec<Party> = event
                    .visibility
                    .iter()
                    .filter(|party| {
                        !matches!(party, Party::Platform)
                            && **party != Party::Driver(*driver)
                    })
                    .copied()
                    .collect();
                if !offending.is_empty() {
                    violations.push(PrivacyViolation {
                        seq: event.seq,
                        rule: PrivacyRule::DriverBidLeak,
                        offending,
                    });
                }
            }
            EventKind::IdentityRevealed { ride, customer, driver } => {
                let pairwise_ok = event.visibility.iter().all(|party| {
                    matches!(party, Party::Platform)
                        || *party == Party::Customer(*customer)
                        || *party == Party::Driver(*driver)
                });
                let ordered = paid.contains(ride);
                let is_winner = winner.get(ride) == Some(driver);
                let owner_ok = owner.get(ride) == Some(customer);
                if !(pairwise_ok && ordered && is_winner && owner_ok) {
                    violations.push(PrivacyViolation {
                        seq: event.seq,
                        rule: PrivacyRule::IdentityRule,
                        offending: event.visibility.clone(),
                    });
                }
            }
            _ => {}
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_log() -> EventLog {
        let mut log = EventLog::new();
        let ride = RideId(1);
        let customer = CustomerId(1);
        log.push(
            Tick(0),
            EventKind::RideRequested {
                ride,
                customer,
                mechanism: MechanismType::T2,
            },
            vec![Party::Platform, Party::Customer(customer)],
        );
        log.push(
            Tick(1),
            EventKind::DriversSelected {
                ride,
                drivers: vec![DriverId(1), DriverId(2)],
                thin_market: false,
            },
            vec![Party::Platform],
        );
        log.push(
            Tick(1),
            EventKind::CustomerBidRelayed {
                ride,
                bid: CustomerBid::Standard {
                    price: Money::from_minor(900),
                },
                drivers: vec![DriverId(1), DriverId(2)],
            },
            vec![
                Party::Platform,
                Party::Customer(customer),
                Party::Driver(DriverId(1)),
                Party::Driver(DriverId(2)),
            ],
        );
        log.push(
            Tick(2),
            EventKind::DriverBidSubmitted {
                ride,
                driver: DriverId(1),
                price: Money::from_minor(850),
            },
            vec![Party::Platform, Party::Driver(DriverId(1))],
        );
        log.push(
            Tick(3),
            EventKind::WinNotified {
                ride,
                driver: DriverId(1),
            },
            vec![Party::Platform, Party::Driver(DriverId(1))],
        );
        log.push(
            Tick(4),
            EventKind::PaymentMade {
                ride,
                customer,
                amount: Money::from_minor(850),
            },
            vec![Party::Platform, Party::Customer(customer)],
        );
        log.push(
            Tick(5),
            EventKind::IdentityRevealed {
                ride,
                customer,
                driver: DriverId(1),
            },
            vec![
                Party::Platform,
                Party::Customer(customer),
                Party::Driver(DriverId(1)),
            ],
        );
        log
    }

    #[test]
    fn clean_log_passes() {
        assert!(audit_privacy(&base_log()).is_empty());
    }

    #[test]
    fn broadcast_bid_is_flagged() {
        let mut log = base_log();
        log.push(
            Tick(6),
            EventKind::CustomerBidRelayed {
                ride: RideId(1),
                bid: CustomerBid::Standard {
                    price: Money::from_minor(900),
                },
                drivers: vec![DriverId(1)],
            },
            vec![
                Party::Platform,
                Party::Customer(CustomerId(1)),
                Party::Driver(DriverId(99)), // not selected
                Party::Customer(CustomerId(2)), // another customer
            ],
        );
        let violations = audit_privacy(&log);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, PrivacyRule::CustomerBidLeak);
        assert_eq!(violations[0].offending.len(), 2);
    }

    #[test]
    fn early_identity_reveal_is_flagged() {
        let mut log = EventLog::new();
        let ride = RideId(2);
        log.push(
            Tick(0),
            EventKind::RideRequested {
                ride,
                customer: CustomerId(3),
                mechanism: MechanismType::T1,
            },
            vec![Party::Platform],
        );
        log.push(
            Tick(1),
            EventKind::WinNotified {
                ride,
                driver: DriverId(4),
            },
            vec![Party::Platform, Party::Driver(DriverId(4))],
        );
        // Revealed before any payment event.
        log.push(
            Tick(2),
            EventKind::IdentityRevealed {
                ride,
                customer: CustomerId(3),
                driver: DriverId(4),
            },
            vec![
                Party::Platform,
                Party::Customer(CustomerId(3)),
                Party::Driver(DriverId(4)),
            ],
        );
        let violations = audit_privacy(&log);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, PrivacyRule::IdentityRule);
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = base_log();
        let text = log.to_jsonl();
        let parsed = EventLog::from_jsonl(&text).unwrap();
        assert_eq!(parsed, log);
    }
}
