//! Integrity layer: collusion detection, GPS distance integrity,
//! arrival/fulfillment guarantees, and sensor-based revenue
//! reconciliation.
//!
//! Detectors are read-only batch passes over immutable observation
//! snapshots; they can run in parallel with simulation of later ticks.

mod collusion;
mod gps;
mod guarantees;

pub use collusion::{
    detect_bid_band_collusion, detect_sync_logoff, BidObservation, CollusionConfig,
    CustomerEvidence, FlaggedGroup, FlaggedPair, LogoffObservation,
};
pub use gps::{
    haversine_km, settlement_fare, verify_distance, DistanceCheck, DistanceDirection, GpsSample,
    GpsTrack, TrackError, EARTH_RADIUS_KM,
};
pub use guarantees::{
    apply_guarantees, reconcile_revenue, GuaranteeAdjustments, GuaranteeTerms, RevenueCheck,
    RevenueMismatch,
};
