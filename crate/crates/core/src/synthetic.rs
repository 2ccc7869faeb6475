//! Seeded synthetic data: geo blobs, service traces and labelled GAF pairs.
//! Used by the `synth` subcommand, the examples and the test suites.

use std::io::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::TraceRecord;
use crate::geo_cluster::{GeoPoint, EARTH_RADIUS_KM};
use crate::rng::{seeded, sub_seed, Rng};
use crate::series_gaf::{encode_window, GafOptions, LabeledPair, MultiStepLabel, WindowMeta};

/// Timestamp format of [`write_trace_csv`].
pub const TRACE_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Well-separated default hotspots (Lisbon, Paris, Rome).
pub fn default_hotspots() -> Vec<GeoPoint> {
    [(38.72, -9.14), (48.86, 2.35), (41.90, 12.50)]
        .iter()
        .map(|&(a, b)| GeoPoint::new(a, b).expect("valid coordinates"))
        .collect()
}

/// Gaussian jitter of `sigma_km` around `c`, in both directions.
fn jitter(c: &GeoPoint, sigma_km: f64, rng: &mut Rng) -> Result<GeoPoint> {
    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let n = Normal::new(0.0, sigma_km).map_err(|e| Error::config(format!("blob sigma: {e}")))?;
    let lat = c.lat() + n.sample(rng) / km_per_deg;
    let lon = c.lon() + n.sample(rng) / (km_per_deg * c.lat().to_radians().cos());
    GeoPoint::new(lat.clamp(-90.0, 90.0), (lon + 540.0).rem_euclid(360.0) - 180.0)
}

/// `per_blob` points around each centre and the index of the generating blob.
pub fn geo_blobs(centers: &[GeoPoint], per_blob: usize, sigma_km: f64, seed: u64) -> Result<(Vec<GeoPoint>, Vec<usize>)> {
    let mut rng = seeded(seed);
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(jitter(c, sigma_km, &mut rng)?);
            labels.push(b);
        }
    }
    Ok((points, labels))
}

/// Parameters of [`generate_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub hotspots: Vec<GeoPoint>,
    pub services: usize,
    pub start: NaiveDateTime,
    /// Length of the trace in minutes.
    pub minutes: usize,
    /// GPS noise around the hotspot.
    pub sigma_km: f64,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            hotspots: default_hotspots(),
            services: 4,
            start: NaiveDate::from_ymd_opt(2024, 3, 4)
                .and_then(|d| d.and_hms_opt(6, 0, 0))
                .expect("valid date"),
            minutes: 360,
            sigma_km: 0.5,
            seed: 7,
        }
    }
}

/// Per-minute presence records. Service `s` lives at hotspot `s mod h` and
/// alternates between on and off spells of service-specific lengths; a small
/// fraction of minutes is flipped at random.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<TraceRecord>> {
    if spec.hotspots.is_empty() || spec.services == 0 || spec.minutes == 0 {
        return Err(Error::config("trace needs hotspots, services and a positive length"));
    }
    let mut rng = seeded(spec.seed);
    let mut out = Vec::new();
    for s in 0..spec.services {
        let home = &spec.hotspots[s % spec.hotspots.len()];
        let on = 3 + s % 5;
        let off = 2 + (s * 3) % 7;
        let offset = rng.random_range(0..on + off);
        let id = format!("svc{s:02}");
        for m in 0..spec.minutes {
            let mut present = (m + offset) % (on + off) < on;
            if rng.random::<f64>() < 0.02 {
                present = !present;
            }
            if present {
                let t = spec.start + Duration::minutes(m as i64) + Duration::seconds(rng.random_range(0..60));
                out.push(TraceRecord::new(id.clone(), jitter(home, spec.sigma_km, &mut rng)?, t)?);
            }
        }
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.service_id.cmp(&b.service_id)));
    Ok(out)
}

/// Two services at distinct hotspots with disjoint active hours
/// (`a` 06:00–10:00, `b` 16:00–20:00), `n` records in total.
pub fn two_service_trace(n: usize, seed: u64) -> Result<Vec<TraceRecord>> {
    let hot = default_hotspots();
    let day = NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date");
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (id, home, hour0) = if i % 2 == 0 { ("a", &hot[0], 6) } else { ("b", &hot[1], 16) };
        let d = day + Duration::days(rng.random_range(0..5));
        let t = d.and_hms_opt(hour0, 0, 0).expect("valid time") + Duration::seconds(rng.random_range(0..4 * 3600));
        out.push(TraceRecord::new(id, jitter(home, 1.0, &mut rng)?, t)?);
    }
    Ok(out)
}

/// CSV with header `service_id,lat,lon,timestamp`.
pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut buf = String::from("service_id,lat,lon,timestamp\n");
    for r in records {
        buf.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            r.service_id,
            r.point.lat(),
            r.point.lon(),
            r.timestamp.format(TRACE_TIME_FORMAT)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `n` labelled image pairs of side `t`. Class `c` is drawn round-robin and
/// its window is a noisy sinusoid whose frequency grows with `c`.
pub fn gaf_pairs(n: usize, gamma: usize, t: usize, seed: u64) -> Result<Vec<LabeledPair>> {
    let classes = 1usize << gamma;
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut rng = seeded(sub_seed(seed, 1));
    (0..n)
        .map(|i| {
            let c = i % classes;
            let freq = 0.15 + 0.22 * c as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w: Vec<f64> = (0..t)
                .map(|j| (freq * j as f64 + phase).sin() + noise.sample(&mut rng))
                .collect();
            Ok(LabeledPair {
                pair: encode_window(&w, &GafOptions::default(), WindowMeta::default())?,
                label: MultiStepLabel::from_class(c, gamma)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_cluster::haversine;

    #[test]
    fn blobs_stay_near_centres() {
        let c = default_hotspots();
        let (pts, labels) = geo_blobs(&c, 50, 5.0, 3).unwrap();
        assert_eq!(pts.len(), 150);
        for (p, &l) in pts.iter().zip(&labels) {
            assert!(haversine(p, &c[l], EARTH_RADIUS_KM).unwrap() < 40.0);
        }
        assert_eq!(geo_blobs(&c, 50, 5.0, 3).unwrap().0, pts);
    }

    #[test]
    fn trace_is_sorted_and_reproducible() {
        let spec = TraceSpec::default();
        let a = generate_trace(&spec).unwrap();
        assert!(a.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert_eq!(a, generate_trace(&spec).unwrap());
        let ids: std::collections::BTreeSet<_> = a.iter().map(|r| r.service_id.as_str()).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn gaf_pairs_cycle_classes() {
        let p = gaf_pairs(16, 3, 8, 0).unwrap();
        assert_eq!(p[9].label.class_index(), 1);
        assert_eq!(p[0].pair.size(), 8);
    }
}
