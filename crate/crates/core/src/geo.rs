//! Geographic coordinates and great-circle distance.
//!
//! Angles are in degrees, distances in kilometres. The earth is modelled as a
//! sphere with the IUGG mean radius.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Mean earth radius in kilometres.
pub const EARTH_MEAN_RADIUS_KM: f64 = 6371.0088;

/// A validated latitude/longitude pair.
///
/// Latitude lies in `[-90, 90]`, longitude is normalized into `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoCoordinate {
    lat: f64,
    lng: f64,
}

impl GeoCoordinate {
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::validation(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !lng.is_finite() {
            return Err(GeoError::validation(format!("longitude {lng} is not finite")));
        }
        Ok(Self {
            lat,
            lng: normalize_longitude(lng),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }

    /// Distance to `other` in kilometres.
    pub fn distance_km(&self, other: &GeoCoordinate) -> f64 {
        great_circle_distance(self, other)
    }
}

impl fmt::Display for GeoCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lng)
    }
}

impl<'de> Deserialize<'de> for GeoCoordinate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lng: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        GeoCoordinate::new(raw.lat, raw.lng).map_err(serde::de::Error::custom)
    }
}

fn normalize_longitude(lng: f64) -> f64 {
    if lng > -180.0 && lng <= 180.0 {
        return lng;
    }
    let wrapped = (lng + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped <= -180.0 {
        wrapped + 360.0
    } else {
        wrapped
    }
}

/// Haversine great-circle distance in kilometres.
///
/// Exactly symmetric in its arguments and exactly zero for identical points.
pub fn great_circle_distance(a: &GeoCoordinate, b: &GeoCoordinate) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let half_dphi = (b.lat - a.lat).to_radians() / 2.0;
    let half_dlambda = (b.lng - a.lng).to_radians() / 2.0;

    let h = half_dphi.sin().powi(2) + phi1.cos() * phi2.cos() * half_dlambda.sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_MEAN_RADIUS_KM * h.sqrt().atan2((1.0 - h).sqrt())
}
