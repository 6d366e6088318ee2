//! Deterministic discrete-event marketplace simulator.

mod engine;
mod event;

pub use engine::{
    ride_spans_overlap, run, run_baseline, ConservationTotals, FailedAuction, IntegrityFindings,
    RideOutcome, RunOutput, SimError,
};
pub use event::{audit_privacy, EventKind, EventLog, LogEvent, PrivacyRule, PrivacyViolation};
