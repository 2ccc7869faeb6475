use std::collections::BTreeSet;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TraceRecord;
use crate::geo_cluster::{assign_cluster, ClusterModel};

/// Largest step count accepted by [`make_label`]; [`make_label_upto`] lifts it.
pub const DEFAULT_MAX_GAMMA: usize = 3;

/// Binary presence of one service in one cluster, step `i` covering
/// `[start + i·granularity, start + (i+1)·granularity)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceSeries {
    pub service_id: String,
    pub cluster_id: usize,
    pub granularity_s: u32,
    pub start: NaiveDateTime,
    pub values: Vec<u8>,
}

impl PresenceSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Step index containing `t`, if inside the series.
    pub fn step_of(&self, t: NaiveDateTime) -> Option<usize> {
        let dt = (t - self.start).num_seconds();
        if dt < 0 {
            return None;
        }
        let i = (dt / self.granularity_s as i64) as usize;
        (i < self.values.len()).then_some(i)
    }

    pub fn step_start(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::seconds(i as i64 * self.granularity_s as i64)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// `values[i] = 1` iff some record of `service_id` in step `i` falls in
/// `cluster_id`. The span runs from the service's first to last record.
pub fn build_presence_series(
    records: &[TraceRecord],
    model: &ClusterModel,
    service_id: &str,
    cluster_id: usize,
    granularity_s: u32,
) -> Result<PresenceSeries> {
    if granularity_s == 0 {
        return Err(Error::config("series granularity must be positive"));
    }
    if cluster_id >= model.k() {
        return Err(Error::validation(format!(
            "cluster id {cluster_id} out of range for k = {}",
            model.k()
        )));
    }
    let own: Vec<&TraceRecord> = records.iter().filter(|r| r.service_id == service_id).collect();
    let start = own
        .iter()
        .map(|r| r.timestamp)
        .min()
        .ok_or_else(|| Error::data(format!("no records for service {service_id:?}")))?;
    let end = own.iter().map(|r| r.timestamp).max().expect("non-empty");
    let g = granularity_s as i64;
    let n = ((end - start).num_seconds() / g) as usize + 1;
    let mut values = vec![0u8; n];
    for r in own {
        if assign_cluster(model, &r.point)? == cluster_id {
            values[((r.timestamp - start).num_seconds() / g) as usize] = 1;
        }
    }
    Ok(PresenceSeries {
        service_id: service_id.to_string(),
        cluster_id,
        granularity_s,
        start,
        values,
    })
}

/// Series for every (service, cluster) pair that occurs in `records`, in
/// (service, cluster) order.
pub fn build_all_series(records: &[TraceRecord], model: &ClusterModel, granularity_s: u32) -> Result<Vec<PresenceSeries>> {
    let mut pairs = BTreeSet::new();
    for r in records {
        pairs.insert((r.service_id.clone(), assign_cluster(model, &r.point)?));
    }
    pairs
        .into_iter()
        .map(|(s, c)| build_presence_series(records, model, &s, c, granularity_s))
        .collect()
}

/// The γ future steps as bits `l_1..l_γ`, with `l_1` the least significant bit
/// of the class index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiStepLabel {
    bits: Vec<u8>,
    class_index: usize,
}

impl MultiStepLabel {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn gamma(&self) -> usize {
        self.bits.len()
    }

    pub fn num_classes(&self) -> usize {
        1 << self.bits.len()
    }

    /// Inverse of [`make_label`].
    pub fn from_class(class_index: usize, gamma: usize) -> Result<Self> {
        if gamma == 0 || gamma > usize::BITS as usize - 1 || class_index >= 1 << gamma {
            return Err(Error::validation(format!("class {class_index} invalid for gamma = {gamma}")));
        }
        let bits = (0..gamma).map(|i| ((class_index >> i) & 1) as u8).collect();
        Ok(Self { bits, class_index })
    }
}

/// Encodes γ binary steps (γ ≤ 3) as `Σ l_i·2^(i−1)`.
pub fn make_label(future: &[f64]) -> Result<MultiStepLabel> {
    make_label_upto(future, DEFAULT_MAX_GAMMA)
}

pub fn make_label_upto(future: &[f64], max_gamma: usize) -> Result<MultiStepLabel> {
    if future.is_empty() || future.len() > max_gamma {
        return Err(Error::validation(format!(
            "label needs 1..={max_gamma} steps, got {}",
            future.len()
        )));
    }
    let mut bits = Vec::with_capacity(future.len());
    let mut class_index = 0;
    for (i, &v) in future.iter().enumerate() {
        let b = match v {
            0.0 => 0u8,
            1.0 => 1u8,
            _ => return Err(Error::validation(format!("label step {i} is not binary: {v}"))),
        };
        class_index |= (b as usize) << i;
        bits.push(b);
    }
    Ok(MultiStepLabel { bits, class_index })
}

/// A window of `k` steps and the label of the γ steps right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub start: usize,
    pub window: Vec<f64>,
    pub label: MultiStepLabel,
}

/// Windows starting at `0, r, 2r, …` while `start + k + γ ≤ n`.
pub fn roll_windows(values: &[f64], k: usize, r: usize, gamma: usize) -> Result<Vec<WindowedSample>> {
    roll_windows_upto(values, k, r, gamma, DEFAULT_MAX_GAMMA)
}

pub fn roll_windows_upto(
    values: &[f64],
    k: usize,
    r: usize,
    gamma: usize,
    max_gamma: usize,
) -> Result<Vec<WindowedSample>> {
    if k == 0 || r == 0 || gamma == 0 {
        return Err(Error::config(format!("window length, stride and gamma must be positive (k={k}, r={r}, gamma={gamma})")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + k + gamma <= values.len() {
        let future = &values[start + k..start + k + gamma];
        out.push(WindowedSample {
            start,
            window: values[start..start + k].to_vec(),
            label: make_label_upto(future, max_gamma)?,
        });
        start += r;
    }
    Ok(out)
}

/// Replaces an all-zero window by a constant `eps` window.
pub fn perturb_zero_series(window: &[f64], eps: f64) -> Vec<f64> {
    if window.iter().all(|&v| v == 0.0) {
        vec![eps; window.len()]
    } else {
        window.to_vec()
    }
}

/// Min-max rescaling onto `[−1, 1]`; constant windows map to zeros.
pub fn rescale_to_unit(window: &[f64]) -> Vec<f64> {
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; window.len()];
    }
    let span = hi - lo;
    window
        .iter()
        .map(|&x| {
            if x == lo {
                -1.0
            } else if x == hi {
                1.0
            } else {
                2.0 * (x - lo) / span - 1.0
            }
        })
        .collect()
}

/// Piecewise aggregate approximation: means of `m` contiguous frames. When
/// `m` does not divide the length, the leading frames take one extra value.
pub fn paa(window: &[f64], m: usize) -> Result<Vec<f64>> {
    let k = window.len();
    if m == 0 || m > k {
        return Err(Error::validation(format!("paa target length {m} must lie in 1..={k}")));
    }
    let (base, extra) = (k / m, k % m);
    let mut out = Vec::with_capacity(m);
    let mut pos = 0;
    for j in 0..m {
        let len = base + usize::from(j < extra);
        out.push(window[pos..pos + len].iter().sum::<f64>() / len as f64);
        pos += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_cluster::GeoPoint;
    use chrono::NaiveDate;

    fn at(min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2015, 3, 2).unwrap().and_hms_opt(10, min, 0).unwrap()
    }

    fn model() -> ClusterModel {
        ClusterModel::new(vec![GeoPoint::new(41.1, -8.6).unwrap(), GeoPoint::new(41.5, -8.2).unwrap()], 6371.0).unwrap()
    }

    fn rec(lat: f64, lon: f64, min: u32) -> TraceRecord {
        TraceRecord::new("taxi", GeoPoint::new(lat, lon).unwrap(), at(min)).unwrap()
    }

    #[test]
    fn one_active_step() {
        let recs = [rec(41.5, -8.2, 0), rec(41.1, -8.6, 3), rec(41.5, -8.2, 4)];
        let s = build_presence_series(&recs, &model(), "taxi", 0, 60).unwrap();
        assert_eq!(s.values, vec![0, 0, 0, 1, 0]);
        let other = build_presence_series(&recs, &model(), "taxi", 1, 60).unwrap();
        assert_eq!(other.values, vec![1, 0, 0, 0, 1]);
        assert!(build_presence_series(&recs, &model(), "bus", 0, 60).is_err());
        assert_eq!(s.step_of(at(3)), Some(3));
        assert_eq!(s.step_start(2), at(2));
    }

    #[test]
    fn every_step_and_wrong_cluster() {
        let recs: Vec<_> = (0..4).map(|m| rec(41.1, -8.6, m)).collect();
        assert_eq!(build_presence_series(&recs, &model(), "taxi", 0, 60).unwrap().values, vec![1; 4]);
        assert_eq!(build_presence_series(&recs, &model(), "taxi", 1, 60).unwrap().values, vec![0; 4]);
        assert_eq!(build_all_series(&recs, &model(), 60).unwrap().len(), 1);
    }

    #[test]
    fn window_starts() {
        let v = vec![0.0; 10];
        let starts: Vec<usize> = roll_windows(&v, 4, 2, 1).unwrap().iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 2, 4]);
        assert_eq!(roll_windows(&v, 9, 1, 1).unwrap().len(), 1);
        assert!(roll_windows(&v, 10, 3, 1).unwrap().is_empty());
        assert!(roll_windows(&v, 0, 1, 1).is_err());
    }

    #[test]
    fn window_label_follows_window() {
        let v = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let w = roll_windows(&v, 2, 1, 3).unwrap();
        assert_eq!(w[0].window, vec![0.0, 1.0]);
        assert_eq!(w[0].label.bits(), &[0, 1, 1]);
        assert_eq!(w[0].label.class_index(), 6);
    }

    #[test]
    fn label_values() {
        assert_eq!(make_label(&[0.0, 0.0, 0.0]).unwrap().class_index(), 0);
        assert_eq!(make_label(&[1.0, 1.0, 1.0]).unwrap().class_index(), 7);
        assert_eq!(make_label(&[0.0, 1.0]).unwrap().class_index(), 2);
        assert!(make_label(&[0.5]).is_err());
        assert!(make_label(&[0.0; 4]).is_err());
        assert_eq!(make_label_upto(&[1.0; 4], 4).unwrap().class_index(), 15);
    }

    #[test]
    fn perturbation() {
        assert_eq!(perturb_zero_series(&[0.0; 3], 1e-3), vec![0.001; 3]);
        assert_eq!(perturb_zero_series(&[0.0, 1.0, 0.0], 1e-3), vec![0.0, 1.0, 0.0]);
        assert_eq!(perturb_zero_series(&[1.0, 1.0], 1e-3), vec![1.0, 1.0]);
    }

    #[test]
    fn rescale_values() {
        assert_eq!(rescale_to_unit(&[0.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(rescale_to_unit(&[3.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(rescale_to_unit(&[0.0, 0.5, 1.0]), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn paa_values() {
        assert_eq!(paa(&[1.0, 1.0, 3.0, 3.0], 2).unwrap(), vec![1.0, 3.0]);
        assert_eq!(paa(&[1.0, 2.0, 3.0], 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(paa(&[4.0; 7], 3).unwrap(), vec![4.0; 3]);
        assert_eq!(paa(&[1.0, 3.0, 5.0, 10.0, 20.0], 2).unwrap(), vec![3.0, 15.0]);
        assert!(paa(&[1.0], 2).is_err());
    }
}
