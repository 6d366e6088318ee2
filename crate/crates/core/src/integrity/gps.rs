//! GPS distance integrity: haversine sampling against reported distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::Tick;
use crate::money::Money;
use crate::params::MeterRate;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Reported distances below this floor are compared against it instead,
/// so a zero report cannot blow up the relative error.
const MIN_REPORTED_KM: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    pub tick: Tick,
    pub lat: f64,
    pub lon: f64,
}

/// In-ride platform sensor record: 4-5 position samples plus the
/// pre-ride route estimate and the driver-reported distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsTrack {
    pub samples: Vec<GpsSample>,
    pub precomputed_distance_km: f64,
    pub precomputed_fare: Money,
    pub reported_distance_km: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrackError {
    #[error("track has {0} samples; 4-5 required")]
    InvalidSampleCount(usize),
    #[error("track timestamps are not strictly increasing")]
    NonIncreasingTimestamps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceDirection {
    InflationSuspected,
    DeflationSuspected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DistanceCheck {
    Ok {
        sampled_km: f64,
    },
    Discrepancy {
        sampled_km: f64,
        reported_km: f64,
        direction: DistanceDirection,
    },
}

/// Great-circle distance on a spherical earth.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let d_phi = (lat2 - lat1).to_radians();
    let d_lambda = (lon2 - lon1).to_radians();
    let a = (d_phi / 2.0).sin().powi(2)
        + phi1.cos() * phi2.cos() * (d_lambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().atan2((1.0 - a).sqrt())
}

impl GpsTrack {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(4..=5).contains(&self.samples.len()) {
            return Err(TrackError::InvalidSampleCount(self.samples.len()));
        }
        if self.samples.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return Err(TrackError::NonIncreasingTimestamps);
        }
        Ok(())
    }

    /// Chord-sum of great-circle distances between consecutive samples.
    pub fn sampled_distance_km(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| haversine_km(w[0].lat, w[0].lon, w[1].lat, w[1].lon))
            .sum()
    }
}

/// Compares the driver-reported distance against the sampled chord sum.
/// The sampled value always under-measures curved routes, which the
/// tolerance absorbs; collinear routes have zero chord error.
pub fn verify_distance(track: &GpsTrack, tolerance: f64) -> Result<DistanceCheck, TrackError> {
    track.validate()?;
    let sampled_km = track.sampled_distance_km();
    let reported_km = track.reported_distance_km;
    let relative = (sampled_km - reported_km).abs() / reported_km.max(MIN_REPORTED_KM);
    if relative <= tolerance {
        Ok(DistanceCheck::Ok { sampled_km })
    } else {
        Ok(DistanceCheck::Discrepancy {
            sampled_km,
            reported_km,
            direction: if reported_km > sampled_km {
                DistanceDirection::InflationSuspected
            } else {
                DistanceDirection::DeflationSuspected
            },
        })
    }
}

/// Fare admitted into settlement: the precomputed fare corrected by the
/// sampled-distance delta. Driver-reported values never enter.
pub fn settlement_fare(track: &GpsTrack, rate: &MeterRate) -> Money {
    let correction =
        rate.per_km.as_f64() * (track.sampled_distance_km() - track.precomputed_distance_km);
    (track.precomputed_fare + Money::from_f64_half_up(correction)).max(Money::ZERO)
}
