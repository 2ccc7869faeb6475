use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{count_distinct_points, kmeans_haversine, within_dispersion};
use super::{DispersionMetric, GeoPoint, InitStrategy, KMeansConfig, EARTH_RADIUS_KM};
use crate::error::{Error, Result};
use crate::rng::{seeded, sub_seed};

/// Dispersions are floored here before taking logs.
pub const DISPERSION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapStatConfig {
    pub k_values: Vec<usize>,
    /// Number of Monte Carlo reference samples.
    pub b: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol_km: f64,
    pub n_init: usize,
    pub metric: DispersionMetric,
    pub earth_radius_km: f64,
}

impl GapStatConfig {
    pub fn new(k_values: Vec<usize>, b: usize, seed: u64) -> Self {
        Self {
            k_values,
            b,
            seed,
            max_iter: 100,
            tol_km: 1e-6,
            n_init: 4,
            metric: DispersionMetric::Squared,
            earth_radius_km: EARTH_RADIUS_KM,
        }
    }

    fn kmeans(&self, k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            seed,
            max_iter: self.max_iter,
            tol_km: self.tol_km,
            n_init: self.n_init,
            init: InitStrategy::PlusPlus,
            earth_radius_km: self.earth_radius_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatResult {
    pub k_values: Vec<usize>,
    pub gap: Vec<f64>,
    pub log_wk: Vec<f64>,
    pub ref_log_wk_mean: Vec<f64>,
    /// Standard deviation of the reference log-dispersions (diagnostic only).
    pub ref_log_wk_sd: Vec<f64>,
    pub chosen_k: usize,
}

/// Log of the floored within-cluster dispersion after clustering `points`
/// into `k` groups. With fewer than `k` distinct points every distinct
/// location is its own cluster and the dispersion is zero.
fn log_dispersion(points: &[GeoPoint], k: usize, cfg: &GapStatConfig, seed: u64) -> Result<f64> {
    let w = if count_distinct_points(points, k) < k {
        0.0
    } else {
        let fit = kmeans_haversine(points, &cfg.kmeans(k, seed))?;
        within_dispersion(points, &fit.assignments, &fit.model, cfg.metric)?
    };
    Ok(w.max(DISPERSION_FLOOR).ln())
}

/// `gap(k) = mean_b log W*_k(b) − log W_k`, references drawn uniformly over the
/// lat/lon bounding box of `points`. The chosen k maximizes the gap, smallest
/// k on ties. Each reference `b` owns the sub-seed `(seed, b)`, so the result
/// does not depend on thread scheduling.
pub fn gap_statistic(points: &[GeoPoint], cfg: &GapStatConfig) -> Result<GapStatResult> {
    if cfg.k_values.is_empty() {
        return Err(Error::config("gap statistic needs a non-empty k range"));
    }
    if cfg.b == 0 {
        return Err(Error::config("gap statistic needs B >= 1 reference samples"));
    }
    if points.is_empty() {
        return Err(Error::data("gap statistic on an empty point set"));
    }
    if let Some(&k) = cfg.k_values.iter().find(|&&k| k == 0 || k > points.len()) {
        return Err(Error::data(format!(
            "k = {k} must be in 1..={} (number of points)",
            points.len()
        )));
    }

    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lon_lo, mut lon_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lat_lo = lat_lo.min(p.lat());
        lat_hi = lat_hi.max(p.lat());
        lon_lo = lon_lo.min(p.lon());
        lon_hi = lon_hi.max(p.lon());
    }

    let observed: Vec<f64> = cfg
        .k_values
        .iter()
        .map(|&k| log_dispersion(points, k, cfg, sub_seed(cfg.seed, k as u64)))
        .collect::<Result<_>>()?;

    // reference[b][ki]
    let reference: Vec<Vec<f64>> = (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let ref_seed = sub_seed(cfg.seed ^ 0x5EED_0000_0000_0000, b as u64);
            let mut rng = seeded(ref_seed);
            let sample: Vec<GeoPoint> = (0..points.len())
                .map(|_| GeoPoint {
                    lat: lerp(lat_lo, lat_hi, rng.random::<f64>()),
                    lon: lerp(lon_lo, lon_hi, rng.random::<f64>()),
                })
                .collect();
            cfg.k_values
                .iter()
                .map(|&k| log_dispersion(&sample, k, cfg, sub_seed(ref_seed, k as u64)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let nb = cfg.b as f64;
    let mut ref_mean = Vec::with_capacity(cfg.k_values.len());
    let mut ref_sd = Vec::with_capacity(cfg.k_values.len());
    for ki in 0..cfg.k_values.len() {
        let mean = reference.iter().map(|r| r[ki]).sum::<f64>() / nb;
        let var = reference.iter().map(|r| (r[ki] - mean).powi(2)).sum::<f64>() / nb;
        ref_mean.push(mean);
        ref_sd.push(var.sqrt());
    }
    let gap: Vec<f64> = ref_mean.iter().zip(&observed).map(|(r, o)| r - o).collect();

    let mut best = 0;
    for i in 1..gap.len() {
        let better = gap[i] > gap[best]
            || (gap[i] == gap[best] && cfg.k_values[i] < cfg.k_values[best]);
        if better {
            best = i;
        }
    }

    Ok(GapStatResult {
        k_values: cfg.k_values.clone(),
        gap,
        log_wk: observed,
        ref_log_wk_mean: ref_mean,
        ref_log_wk_sd: ref_sd,
        chosen_k: cfg.k_values[best],
    })
}

fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    (lo + (hi - lo) * t).clamp(lo, hi)
}
