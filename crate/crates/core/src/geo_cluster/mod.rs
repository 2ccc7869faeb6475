//! Hotspot discovery: K-means under the Haversine metric and the gap
//! statistic for choosing the number of clusters.

mod gap;
mod kmeans;

pub use gap::{gap_statistic, GapStatConfig, GapStatResult};
pub use kmeans::{
    assign_cluster, assign_all, kmeans_cost, kmeans_haversine, within_dispersion, ClusterModel,
    DispersionMetric, InitStrategy, KMeansConfig, KMeansFit,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::validation(format!("latitude out of range: {lat}")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::validation(format!("longitude out of range: {lon}")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance between two positions given in degrees, on a sphere
/// of radius `radius`.
///
/// `a = sin²(Δφ/2) + cos φ1 · cos φ2 · sin²(Δλ/2)`, `d = 2R · atan2(√a, √(1−a))`.
pub fn haversine_deg<T: Scalar>(lat1: T, lon1: T, lat2: T, lon2: T, radius: T) -> T {
    let two = T::of(2.0);
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat1 - lat2).to_radians();
    let dlambda = (lon1 - lon2).to_radians();
    let s_phi = (dphi / two).sin();
    let s_lambda = (dlambda / two).sin();
    // Rounding can push `a` a hair past 1 for antipodes.
    let a = (s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda)
        .max(T::zero())
        .min(T::one());
    two * a.sqrt().atan2((T::one() - a).sqrt()) * radius
}

/// Haversine distance in kilometres between two validated points.
pub fn haversine(p1: &GeoPoint, p2: &GeoPoint, radius_km: f64) -> Result<f64> {
    if !(radius_km.is_finite() && radius_km > 0.0) {
        return Err(Error::validation(format!(
            "earth radius must be positive, got {radius_km}"
        )));
    }
    Ok(haversine_deg(p1.lat, p1.lon, p2.lat, p2.lon, radius_km))
}

#[inline]
pub(crate) fn dist(p1: &GeoPoint, p2: &GeoPoint, radius_km: f64) -> f64 {
    haversine_deg(p1.lat, p1.lon, p2.lat, p2.lon, radius_km)
}
