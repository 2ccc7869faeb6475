use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{dist, GeoPoint, EARTH_RADIUS_KM};
use crate::error::{Error, Result};
use crate::rng::{seeded, sub_seed, Rng};

/// Trained hotspot centroids.
///
/// Centroids are arithmetic means of member latitudes/longitudes in degrees.
/// That is accurate for city-scale clusters away from the poles and the
/// antimeridian; it is not the exact spherical mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    centroids: Vec<GeoPoint>,
    earth_radius_km: f64,
}

impl ClusterModel {
    pub fn new(centroids: Vec<GeoPoint>, earth_radius_km: f64) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::validation("cluster model needs at least one centroid"));
        }
        if !(earth_radius_km.is_finite() && earth_radius_km > 0.0) {
            return Err(Error::validation(format!(
                "earth radius must be positive, got {earth_radius_km}"
            )));
        }
        for (i, a) in centroids.iter().enumerate() {
            if centroids[..i].iter().any(|b| b == a) {
                return Err(Error::validation(format!("duplicate centroid {i}")));
            }
        }
        Ok(Self {
            centroids,
            earth_radius_km,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[GeoPoint] {
        &self.centroids
    }

    pub fn earth_radius_km(&self) -> f64 {
        self.earth_radius_km
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// k distinct data points drawn uniformly.
    RandomPoints,
    /// First centroid uniform, the rest drawn proportional to squared distance.
    PlusPlus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (km).
    pub tol_km: f64,
    /// Independent restarts; the lowest final cost wins.
    pub n_init: usize,
    pub init: InitStrategy,
    pub earth_radius_km: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol_km: 1e-6,
            n_init: 4,
            init: InitStrategy::PlusPlus,
            earth_radius_km: EARTH_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Sum of squared Haversine distances after each assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn cost(&self) -> f64 {
        *self.cost_history.last().expect("at least one assignment step")
    }
}

/// Index of the nearest centroid; ties go to the smallest index.
pub fn assign_cluster(model: &ClusterModel, p: &GeoPoint) -> Result<usize> {
    // Re-validate in case the point was built through deserialization.
    GeoPoint::new(p.lat(), p.lon())?;
    Ok(nearest(&model.centroids, p, model.earth_radius_km).0)
}

pub fn assign_all(model: &ClusterModel, points: &[GeoPoint]) -> Vec<usize> {
    points
        .iter()
        .map(|p| nearest(&model.centroids, p, model.earth_radius_km).0)
        .collect()
}

fn nearest(centroids: &[GeoPoint], p: &GeoPoint, radius: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist(p, c, radius);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum over points of the squared Haversine distance to their assigned centroid.
pub fn kmeans_cost(points: &[GeoPoint], assignments: &[usize], model: &ClusterModel) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| {
            let d = dist(p, &model.centroids[j], model.earth_radius_km);
            d * d
        })
        .sum()
}

pub fn kmeans_haversine(points: &[GeoPoint], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::data("k-means on an empty point set"));
    }
    if cfg.k == 0 || cfg.k > points.len() {
        return Err(Error::data(format!(
            "k = {} must be in 1..={} (number of points)",
            cfg.k,
            points.len()
        )));
    }
    if !(cfg.earth_radius_km > 0.0) || !(cfg.tol_km >= 0.0) {
        return Err(Error::config("earth radius must be positive and tol non-negative"));
    }
    if count_distinct_points(points, cfg.k) < cfg.k {
        return Err(Error::data(format!(
            "fewer than k = {} distinct points",
            cfg.k
        )));
    }

    let mut best: Option<KMeansFit> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut rng = seeded(sub_seed(cfg.seed, restart as u64));
        let fit = lloyd(points, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| fit.cost() < b.cost()) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Number of distinct points, counting no further than `cap`.
pub(super) fn count_distinct_points(points: &[GeoPoint], cap: usize) -> usize {
    let mut seen: Vec<GeoPoint> = Vec::with_capacity(cap);
    for p in points {
        if !seen.contains(p) {
            seen.push(*p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn initial_centroids(points: &[GeoPoint], cfg: &KMeansConfig, rng: &mut Rng) -> Vec<GeoPoint> {
    let mut centroids: Vec<GeoPoint> = Vec::with_capacity(cfg.k);
    match cfg.init {
        InitStrategy::RandomPoints => {
            while centroids.len() < cfg.k {
                let p = points[rng.random_range(0..points.len())];
                if !centroids.contains(&p) {
                    centroids.push(p);
                }
            }
        }
        InitStrategy::PlusPlus => {
            centroids.push(points[rng.random_range(0..points.len())]);
            let mut d2: Vec<f64> = points
                .iter()
                .map(|p| dist(p, &centroids[0], cfg.earth_radius_km).powi(2))
                .collect();
            while centroids.len() < cfg.k {
                let total: f64 = d2.iter().sum();
                // total > 0 because at least k distinct points exist.
                let mut target = rng.random::<f64>() * total;
                let mut pick = d2.len() - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if w > 0.0 && target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                if d2[pick] == 0.0 {
                    pick = d2.iter().rposition(|&w| w > 0.0).expect("distinct point left");
                }
                let c = points[pick];
                centroids.push(c);
                for (w, p) in d2.iter_mut().zip(points) {
                    *w = w.min(dist(p, &c, cfg.earth_radius_km).powi(2));
                }
            }
        }
    }
    centroids
}

fn lloyd(points: &[GeoPoint], cfg: &KMeansConfig, rng: &mut Rng) -> KMeansFit {
    let radius = cfg.earth_radius_km;
    let k = cfg.k;
    let mut centroids = initial_centroids(points, cfg, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0.0f64; points.len()];
    let mut cost_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let assign = |centroids: &[GeoPoint], assignments: &mut [usize], dists: &mut [f64]| -> f64 {
        let mut cost = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(centroids, p, radius);
            assignments[i] = j;
            dists[i] = d;
            cost += d * d;
        }
        cost
    };

    cost_history.push(assign(&centroids, &mut assignments, &mut dists));

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (p, &j) in points.iter().zip(&assignments) {
            sums[j].0 += p.lat();
            sums[j].1 += p.lon();
            sums[j].2 += 1;
        }
        let mut next: Vec<GeoPoint> = sums
            .iter()
            .zip(&centroids)
            .map(|(&(lat, lon, n), old)| {
                if n == 0 {
                    *old
                } else {
                    GeoPoint {
                        lat: (lat / n as f64).clamp(-90.0, 90.0),
                        lon: (lon / n as f64).clamp(-180.0, 180.0),
                    }
                }
            })
            .collect();
        // Empty clusters take over the point farthest from its centroid.
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if sums[j].2 == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("more points than empty clusters");
                taken.push(far);
                next[j] = points[far];
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist(a, b, radius))
            .fold(0.0f64, f64::max);
        centroids = next;
        cost_history.push(assign(&centroids, &mut assignments, &mut dists));
        if shift < cfg.tol_km {
            converged = true;
            break;
        }
    }

    KMeansFit {
        model: ClusterModel {
            centroids,
            earth_radius_km: radius,
        },
        assignments,
        cost_history,
        iterations,
        converged,
    }
}

/// How pairwise distances enter the within-cluster dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMetric {
    Squared,
    Plain,
}

/// `W_k = Σ_clusters D_i / (2 n_i)` where `D_i` sums (squared) Haversine
/// distances over ordered pairs inside cluster `i`. Empty clusters add 0.
pub fn within_dispersion(
    points: &[GeoPoint],
    assignments: &[usize],
    model: &ClusterModel,
    metric: DispersionMetric,
) -> Result<f64> {
    if points.len() != assignments.len() {
        return Err(Error::Shape {
            op: "within_dispersion",
            left: vec![points.len()],
            right: vec![assignments.len()],
        });
    }
    let k = model.k();
    let mut members: Vec<Vec<&GeoPoint>> = vec![Vec::new(); k];
    for (p, &j) in points.iter().zip(assignments) {
        if j >= k {
            return Err(Error::validation(format!(
                "assignment {j} out of range for k = {k}"
            )));
        }
        members[j].push(p);
    }
    let radius = model.earth_radius_km;
    let mut w = 0.0;
    for cluster in members.iter().filter(|m| m.len() > 1) {
        let mut unordered = 0.0;
        for (a, pa) in cluster.iter().enumerate() {
            for pb in &cluster[a + 1..] {
                let d = dist(pa, pb, radius);
                unordered += match metric {
                    DispersionMetric::Squared => d * d,
                    DispersionMetric::Plain => d,
                };
            }
        }
        // Ordered pairs count each unordered pair twice.
        w += 2.0 * unordered / (2.0 * cluster.len() as f64);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn model(cs: &[(f64, f64)]) -> ClusterModel {
        ClusterModel::new(cs.iter().map(|&(a, b)| p(a, b)).collect(), EARTH_RADIUS_KM).unwrap()
    }

    #[test]
    fn assign_returns_exact_centroid() {
        let m = model(&[(10.0, 10.0), (20.0, 20.0), (30.0, 30.0)]);
        assert_eq!(assign_cluster(&m, &p(30.0, 30.0)).unwrap(), 2);
    }

    #[test]
    fn assign_tie_goes_to_smallest_index() {
        let m = model(&[(0.0, -1.0), (0.0, 1.0)]);
        assert_eq!(assign_cluster(&m, &p(0.0, 0.0)).unwrap(), 0);
    }

    #[test]
    fn duplicate_centroids_rejected() {
        assert!(ClusterModel::new(vec![p(1.0, 1.0), p(1.0, 1.0)], 6371.0).is_err());
    }

    #[test]
    fn k_out_of_range_is_an_error() {
        let pts = vec![p(0.0, 0.0), p(1.0, 1.0)];
        assert!(kmeans_haversine(&pts, &KMeansConfig::new(3, 0)).is_err());
        assert!(kmeans_haversine(&pts, &KMeansConfig::new(0, 0)).is_err());
        assert!(kmeans_haversine(&[], &KMeansConfig::new(1, 0)).is_err());
    }

    #[test]
    fn single_cluster_cost_is_total_dispersion() {
        let pts = vec![p(41.0, -8.0), p(41.1, -8.1), p(41.2, -8.05), p(40.95, -7.9)];
        let fit = kmeans_haversine(&pts, &KMeansConfig::new(1, 5)).unwrap();
        let lat = pts.iter().map(|q| q.lat()).sum::<f64>() / 4.0;
        let lon = pts.iter().map(|q| q.lon()).sum::<f64>() / 4.0;
        let c = p(lat, lon);
        let expected: f64 = pts.iter().map(|q| dist(q, &c, EARTH_RADIUS_KM).powi(2)).sum();
        assert_relative_eq!(fit.cost(), expected, max_relative = 1e-12);
    }

    #[test]
    fn k_equal_n_gives_zero_cost() {
        let pts = vec![p(41.0, -8.0), p(42.0, -8.1), p(43.0, -8.05)];
        for init in [InitStrategy::PlusPlus, InitStrategy::RandomPoints] {
            let mut cfg = KMeansConfig::new(3, 1);
            cfg.init = init;
            let fit = kmeans_haversine(&pts, &cfg).unwrap();
            assert_eq!(fit.cost(), 0.0);
            let mut cs = fit.model.centroids().to_vec();
            cs.sort_by(|a, b| a.lat().total_cmp(&b.lat()));
            assert_eq!(cs, pts);
        }
    }

    #[test]
    fn dispersion_two_points() {
        let pts = vec![p(0.0, 0.0), p(0.0, 1.0)];
        let m = model(&[(0.0, 0.5)]);
        let d = dist(&pts[0], &pts[1], EARTH_RADIUS_KM);
        let w = within_dispersion(&pts, &[0, 0], &m, DispersionMetric::Squared).unwrap();
        assert_relative_eq!(w, d * d / 2.0, max_relative = 1e-12);
        let w1 = within_dispersion(&pts, &[0, 0], &m, DispersionMetric::Plain).unwrap();
        assert_relative_eq!(w1, d / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn dispersion_three_collinear_points() {
        // Equator points one degree apart: pairwise distances d, d, 2d exactly.
        let pts = vec![p(0.0, 0.0), p(0.0, 1.0), p(0.0, 2.0)];
        let m = model(&[(0.0, 1.0)]);
        let d = dist(&pts[0], &pts[1], EARTH_RADIUS_KM);
        let w = within_dispersion(&pts, &[0, 0, 0], &m, DispersionMetric::Squared).unwrap();
        assert_relative_eq!(w, 2.0 * d * d, max_relative = 1e-12);
    }

    #[test]
    fn dispersion_singletons_and_empty_clusters() {
        let pts = vec![p(0.0, 0.0), p(0.0, 1.0)];
        let m = model(&[(0.0, 0.0), (0.0, 1.0), (5.0, 5.0)]);
        let w = within_dispersion(&pts, &[0, 1], &m, DispersionMetric::Squared).unwrap();
        assert_eq!(w, 0.0);
        assert!(within_dispersion(&pts, &[0, 3], &m, DispersionMetric::Squared).is_err());
    }

    #[test]
    fn split_refinement_does_not_increase_dispersion() {
        let pts: Vec<GeoPoint> = (0..12)
            .map(|i| p(40.0 + 0.01 * i as f64, -8.0 + 0.003 * (i * i % 7) as f64))
            .collect();
        let one = model(&[(40.05, -8.0)]);
        let two = model(&[(40.02, -8.0), (40.09, -8.0)]);
        let a1 = vec![0; 12];
        let a2: Vec<usize> = (0..12).map(|i| usize::from(i >= 6)).collect();
        let w1 = within_dispersion(&pts, &a1, &one, DispersionMetric::Squared).unwrap();
        let w2 = within_dispersion(&pts, &a2, &two, DispersionMetric::Squared).unwrap();
        assert!(w2 <= w1);
    }
}
