//! The five auction protocols as explicit state machines: quoting,
//! driver selection, preference-state bidding, customer revisions,
//! assignment and lockout bookkeeping.

mod auction;
mod bid;
mod lockout;

pub use auction::{
    AuctionError, AuctionState, DriverSnapshot, FailReason, Phase, SelectedDriver,
};
pub use bid::{BidResolution, CustomerBid, CustomerBidError, DriverPreference, RevisionError};
pub use lockout::{LockoutConflict, LockoutRegistry};

use crate::money::{apply_fraction, Money};
use crate::params::{MechanismType, PlatformEconomics, PricingParams};
use crate::payoffs::compute_base_price;

/// Route estimate computed before bidding begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteEstimate {
    pub distance_km: f64,
    pub duration_minutes: f64,
}

/// Standard and base prices quoted at ride inception.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quote {
    pub standard_price: Money,
    pub base_price: Money,
}

impl Quote {
    /// Standard price from the meter rate (capped for T2) and base price
    /// from the platform break-even, less any brand subsidy.
    pub fn compute(
        params: &PricingParams,
        econ: &PlatformEconomics,
        route: RouteEstimate,
    ) -> Quote {
        let fare = params.meter_rate.fare(route.distance_km, route.duration_minutes);
        let standard_price = match params.mechanism {
            MechanismType::T2 => apply_fraction(fare, params.standard_cap_factor)
                .expect("validated cap factor"),
            _ => fare,
        };
        let base_price = compute_base_price(econ, params.fee_split(), econ.brand_subsidy);
        Quote {
            standard_price,
            base_price,
        }
    }
}
