//! Lockout and off-duty bookkeeping shared by all concurrent auctions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{DriverId, Tick};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("driver {driver} already holds a lockout overlapping [{from:?}, {to:?}]")]
pub struct LockoutConflict {
    pub driver: DriverId,
    pub from: Tick,
    pub to: Tick,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct OffDuty {
    since: Tick,
    earliest_return: Tick,
}

/// Serialized shared registry of blocked intervals and off-duty windows.
/// One writer at a time: the sim event loop performs atomic
/// check-and-reserve through [`LockoutRegistry::reserve`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LockoutRegistry {
    blocked: BTreeMap<DriverId, Vec<(Tick, Tick)>>,
    off_duty: BTreeMap<DriverId, OffDuty>,
}

impl LockoutRegistry {
    pub fn new() -> Self {
        LockoutRegistry::default()
    }

    /// True when `at` falls inside any of the driver's blocked intervals.
    pub fn is_blocked(&self, driver: DriverId, at: Tick) -> bool {
        self.blocked
            .get(&driver)
            .is_some_and(|spans| spans.iter().any(|&(from, to)| from <= at && at <= to))
    }

    /// True when the candidate interval overlaps an existing reservation.
    pub fn would_overlap(&self, driver: DriverId, from: Tick, to: Tick) -> bool {
        self.blocked
            .get(&driver)
            .is_some_and(|spans| spans.iter().any(|&(a, b)| from <= b && a <= to))
    }

    /// Check-and-reserve: writes the interval only if it conflicts with
    /// nothing already held by the driver.
    pub fn reserve(
        &mut self,
        driver: DriverId,
        from: Tick,
        to: Tick,
    ) -> Result<(), LockoutConflict> {
        if self.would_overlap(driver, from, to) {
            return Err(LockoutConflict { driver, from, to });
        }
        self.blocked.entry(driver).or_default().push((from, to));
        Ok(())
    }

    pub fn intervals(&self, driver: DriverId) -> &[(Tick, Tick)] {
        self.blocked.get(&driver).map_or(&[], Vec::as_slice)
    }

    /// Rolls back a reservation that did not consummate into a ride.
    pub fn release(&mut self, driver: DriverId, from: Tick, to: Tick) {
        if let Some(spans) = self.blocked.get_mut(&driver) {
            if let Some(pos) = spans.iter().position(|&span| span == (from, to)) {
                spans.remove(pos);
            }
        }
    }

    pub fn drivers_with_reservations(&self) -> impl Iterator<Item = DriverId> + '_ {
        self.blocked.keys().copied()
    }

    pub fn log_off(&mut self, driver: DriverId, now: Tick, min_off_seconds: u64) {
        self.off_duty.insert(
            driver,
            OffDuty {
                since: now,
                earliest_return: now.plus(min_off_seconds),
            },
        );
    }

    /// Returns to duty only after the configured time has elapsed.
    pub fn try_log_on(&mut self, driver: DriverId, now: Tick) -> bool {
        match self.off_duty.get(&driver) {
            Some(entry) if now >= entry.earliest_return => {
                self.off_duty.remove(&driver);
                true
            }
            Some(_) => false,
            None => true,
        }
    }

    pub fn is_off_duty(&self, driver: DriverId) -> bool {
        self.off_duty.contains_key(&driver)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(id: u32) -> DriverId {
        DriverId(id)
    }

    #[test]
    fn reserve_rejects_overlap() {
        let mut reg = LockoutRegistry::new();
        reg.reserve(d(1), Tick(100), Tick(200)).unwrap();
        assert!(reg.reserve(d(1), Tick(150), Tick(250)).is_err());
        assert!(reg.reserve(d(1), Tick(201), Tick(300)).is_ok());
        assert!(reg.reserve(d(2), Tick(150), Tick(250)).is_ok());
    }

    #[test]
    fn blocked_interval_is_closed() {
        let mut reg = LockoutRegistry::new();
        reg.reserve(d(1), Tick(100), Tick(200)).unwrap();
        assert!(reg.is_blocked(d(1), Tick(100)));
        assert!(reg.is_blocked(d(1), Tick(200)));
        assert!(!reg.is_blocked(d(1), Tick(99)));
        assert!(!reg.is_blocked(d(1), Tick(201)));
    }

    #[test]
    fn off_duty_requires_elapsed_time() {
        let mut reg = LockoutRegistry::new();
        reg.log_off(d(3), Tick(1000), 600);
        assert!(reg.is_off_duty(d(3)));
        assert!(!reg.try_log_on(d(3), Tick(1300)));
        assert!(reg.is_off_duty(d(3)));
        assert!(reg.try_log_on(d(3), Tick(1600)));
        assert!(!reg.is_off_duty(d(3)));
    }
}
