//! Identifier newtypes and the simulation clock.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriverId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CustomerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RideId(pub u64);

impl fmt::Display for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

impl fmt::Display for CustomerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for RideId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Discrete simulation instant, one tick per simulated second. Exact
/// integer time keeps every deadline comparison deterministic.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub fn plus(self, seconds: u64) -> Tick {
        Tick(self.0 + seconds)
    }

    /// Saturating backwards offset; simulated time starts at zero.
    pub fn minus(self, seconds: u64) -> Tick {
        Tick(self.0.saturating_sub(seconds))
    }
}

pub const SECONDS_PER_MINUTE: u64 = 60;

pub fn minutes(n: u64) -> u64 {
    n * SECONDS_PER_MINUTE
}

pub fn hours(n: u64) -> u64 {
    n * 60 * SECONDS_PER_MINUTE
}
