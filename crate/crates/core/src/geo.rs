//! Local equirectangular projection between lon/lat degrees and kilometres.

use serde::{Deserialize, Serialize};

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A lon/lat point in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Equirectangular projection anchored at a reference latitude.
///
/// Accurate to well under a percent over city-sized extents, which is all the
/// simulator needs for pickup distances and straight-line movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: LonLat,
    km_per_deg_lon: f64,
    km_per_deg_lat: f64,
}

impl Projection {
    pub fn new(origin: LonLat, ref_lat: f64) -> Self {
        let km_per_deg_lat = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Self {
            origin,
            km_per_deg_lon: km_per_deg_lat * ref_lat.to_radians().cos(),
            km_per_deg_lat,
        }
    }

    pub fn to_km(&self, p: LonLat) -> (f64, f64) {
        (
            (p.lon - self.origin.lon) * self.km_per_deg_lon,
            (p.lat - self.origin.lat) * self.km_per_deg_lat,
        )
    }

    pub fn from_km(&self, x: f64, y: f64) -> LonLat {
        LonLat {
            lon: self.origin.lon + x / self.km_per_deg_lon,
            lat: self.origin.lat + y / self.km_per_deg_lat,
        }
    }

    pub fn km_per_deg_lon(&self) -> f64 {
        self.km_per_deg_lon
    }

    pub fn km_per_deg_lat(&self) -> f64 {
        self.km_per_deg_lat
    }

    pub fn distance_km(&self, a: LonLat, b: LonLat) -> f64 {
        let dx = (a.lon - b.lon) * self.km_per_deg_lon;
        let dy = (a.lat - b.lat) * self.km_per_deg_lat;
        dx.hypot(dy)
    }
}
