//! Two-sided dynamic-pricing auction mechanisms for ride-hailing
//! marketplaces: the five protocol state machines with their payoff
//! functions, an integrity layer (collusion detection, GPS distance
//! checks, arrival/fulfillment guarantees), a deterministic
//! discrete-event market simulator, and a brute-force verifier for
//! mechanism properties on small instances.
//!
//! Money is exact integer minor units end to end; expected-payoff
//! analytics round to money once, at the edge. Every random draw flows
//! through a single seeded generator, so a scenario and a seed pin the
//! entire run.

pub mod agents;
pub mod ids;
pub mod integrity;
pub mod mechanisms;
pub mod money;
pub mod params;
pub mod payoffs;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use ids::{CustomerId, DriverId, RideId, Tick};
pub use money::{apply_fraction, settle_ride, Ledger, Money, Probability};
pub use params::{MechanismType, PlatformEconomics, PricingParams};
