//! Spatiotemporal features for the availability classifier and their numeric
//! encoding.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_cluster::{assign_cluster, ClusterModel, GeoPoint};
use crate::scalar::Scalar;

pub const SECONDS_PER_DAY: u32 = 86_400;

/// One observation of a service provider. Timestamps are local civil time of
/// the dataset; no timezone conversion is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub service_id: String,
    pub point: GeoPoint,
    pub timestamp: NaiveDateTime,
}

impl TraceRecord {
    pub fn new(service_id: impl Into<String>, point: GeoPoint, timestamp: NaiveDateTime) -> Result<Self> {
        let service_id = service_id.into();
        if service_id.trim().is_empty() {
            return Err(Error::validation("empty service id"));
        }
        Ok(Self {
            service_id,
            point,
            timestamp,
        })
    }

    /// Builds a record from raw text fields; `format` is a chrono format string.
    pub fn parse(service_id: &str, lat: &str, lon: &str, timestamp: &str, format: &str) -> Result<Self> {
        let lat: f64 = lat
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("unparseable latitude {lat:?}")))?;
        let lon: f64 = lon
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("unparseable longitude {lon:?}")))?;
        let point = GeoPoint::new(lat, lon)?;
        let ts = NaiveDateTime::parse_from_str(timestamp.trim(), format).map_err(|e| {
            Error::validation(format!(
                "unparseable timestamp {timestamp:?} for service {service_id:?} (format {format:?}): {e}"
            ))
        })?;
        Self::new(service_id.trim(), point, ts)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    /// One ISO-8601 date per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut dates = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let d = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                reason: format!("bad date {line:?}: {e}"),
            })?;
            dates.insert(d);
        }
        Ok(Self { dates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.dates.contains(&d)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since midnight, in `[0, 86400)`.
    pub time_of_day: u32,
    /// Monday = 0 .. Sunday = 6.
    pub day_of_week: u8,
    pub is_weekday: bool,
    pub is_holiday: bool,
    /// 1..=12; only encoded when month features are enabled.
    pub month: u8,
}

pub fn extract_features(record: &TraceRecord, cal: &HolidayCalendar) -> FeatureVector {
    let ts = record.timestamp;
    let day_of_week = ts.weekday().num_days_from_monday() as u8;
    FeatureVector {
        lat: record.point.lat(),
        lon: record.point.lon(),
        time_of_day: ts.num_seconds_from_midnight(),
        day_of_week,
        is_weekday: day_of_week < 5,
        is_holiday: cal.contains(ts.date()),
        month: ts.month() as u8,
    }
}

/// Service ids in lexicographic order; labels are positions in this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceVocabulary {
    ids: Vec<String>,
}

impl ServiceVocabulary {
    pub fn new(ids: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = ids.into_iter().collect();
        Self {
            ids: set.into_iter().collect(),
        }
    }

    pub fn from_records(records: &[TraceRecord]) -> Self {
        Self::new(records.iter().map(|r| r.service_id.clone()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn label_of(&self, service_id: &str) -> Option<usize> {
        self.ids.binary_search_by(|s| s.as_str().cmp(service_id)).ok()
    }

    pub fn service_of(&self, label: usize) -> Option<&str> {
        self.ids.get(label).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub features: FeatureVector,
    pub cluster_id: usize,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct InstanceSet {
    pub instances: Vec<TrainingInstance>,
    pub vocabulary: ServiceVocabulary,
    /// `(record index, reason)` for records that could not be turned into instances.
    pub rejects: Vec<(usize, String)>,
}

/// One instance per record: cluster from the model, label from the sorted
/// service vocabulary.
pub fn build_instances(records: &[TraceRecord], model: &ClusterModel, cal: &HolidayCalendar) -> InstanceSet {
    let vocabulary = ServiceVocabulary::from_records(records);
    build_instances_with(records, model, cal, &vocabulary)
}

/// Same as [`build_instances`] against a fixed vocabulary; records of unknown
/// services are rejected.
pub fn build_instances_with(
    records: &[TraceRecord],
    model: &ClusterModel,
    cal: &HolidayCalendar,
    vocabulary: &ServiceVocabulary,
) -> InstanceSet {
    let mut instances = Vec::with_capacity(records.len());
    let mut rejects = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(label) = vocabulary.label_of(&r.service_id) else {
            rejects.push((i, format!("unknown service {:?}", r.service_id)));
            continue;
        };
        match assign_cluster(model, &r.point) {
            Ok(cluster_id) => instances.push(TrainingInstance {
                features: extract_features(r, cal),
                cluster_id,
                label,
            }),
            Err(e) => rejects.push((i, e.to_string())),
        }
    }
    InstanceSet {
        instances,
        vocabulary: vocabulary.clone(),
        rejects,
    }
}

/// Switches for [`EncodingConfig::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingOptions {
    /// z-score latitude/longitude; otherwise raw degrees are fed.
    pub normalize_latlon: bool,
    /// Append a 12-way month one-hot.
    pub include_month: bool,
}

impl Default for EncodingOptions {
    fn default() -> Self {
        Self {
            normalize_latlon: true,
            include_month: false,
        }
    }
}

/// Normalization statistics and layout of the stage-1 input vector, fitted on
/// the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub options: EncodingOptions,
    pub lat_mean: f64,
    pub lat_std: f64,
    pub lon_mean: f64,
    pub lon_std: f64,
    pub n_clusters: usize,
}

impl EncodingConfig {
    pub fn fit(train: &[FeatureVector], n_clusters: usize, options: EncodingOptions) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::data("cannot fit encoding on an empty training split"));
        }
        if n_clusters == 0 {
            return Err(Error::config("encoding needs at least one cluster"));
        }
        let (lat_mean, lat_std) = mean_std(train.iter().map(|f| f.lat));
        let (lon_mean, lon_std) = mean_std(train.iter().map(|f| f.lon));
        Ok(Self {
            options,
            lat_mean,
            lat_std,
            lon_mean,
            lon_std,
            n_clusters,
        })
    }

    /// lat, lon, time, 7 weekday slots, is_weekday, is_holiday, k cluster slots
    /// (+ 12 month slots when enabled).
    pub fn input_len(&self) -> usize {
        2 + 1 + 7 + 1 + 1 + self.n_clusters + if self.options.include_month { 12 } else { 0 }
    }
}

/// Population mean and standard deviation; a zero spread is reported as 1 so
/// that z-scoring stays finite.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

pub fn encode_input<T: Scalar>(fv: &FeatureVector, cluster_id: usize, cfg: &EncodingConfig) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(cfg.input_len());
    encode_into(fv, cluster_id, cfg, &mut out)?;
    Ok(out)
}

/// Appends the encoding of one instance to `out`.
pub fn encode_into<T: Scalar>(
    fv: &FeatureVector,
    cluster_id: usize,
    cfg: &EncodingConfig,
    out: &mut Vec<T>,
) -> Result<()> {
    if cluster_id >= cfg.n_clusters {
        return Err(Error::validation(format!(
            "cluster id {cluster_id} out of range for k = {}",
            cfg.n_clusters
        )));
    }
    if fv.day_of_week > 6 || fv.time_of_day >= SECONDS_PER_DAY {
        return Err(Error::validation("feature vector out of range"));
    }
    let one_hot = |out: &mut Vec<T>, n: usize, hot: usize| {
        out.extend((0..n).map(|i| if i == hot { T::one() } else { T::zero() }));
    };
    let bit = |b: bool| if b { T::one() } else { T::zero() };

    if cfg.options.normalize_latlon {
        out.push(T::of((fv.lat - cfg.lat_mean) / cfg.lat_std));
        out.push(T::of((fv.lon - cfg.lon_mean) / cfg.lon_std));
    } else {
        out.push(T::of(fv.lat));
        out.push(T::of(fv.lon));
    }
    out.push(T::of(fv.time_of_day as f64 / SECONDS_PER_DAY as f64));
    one_hot(out, 7, fv.day_of_week as usize);
    out.push(bit(fv.is_weekday));
    out.push(bit(fv.is_holiday));
    one_hot(out, cfg.n_clusters, cluster_id);
    if cfg.options.include_month {
        if !(1..=12).contains(&fv.month) {
            return Err(Error::validation(format!("month {} out of range", fv.month)));
        }
        one_hot(out, 12, fv.month as usize - 1);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_cluster::EARTH_RADIUS_KM;

    fn rec(id: &str, lat: f64, lon: f64, ts: &str) -> TraceRecord {
        TraceRecord::parse(id, &lat.to_string(), &lon.to_string(), ts, "%Y-%m-%d %H:%M:%S").unwrap()
    }

    fn fitted(k: usize) -> EncodingConfig {
        EncodingConfig {
            options: EncodingOptions::default(),
            lat_mean: 41.0,
            lat_std: 0.5,
            lon_mean: -8.0,
            lon_std: 0.25,
            n_clusters: k,
        }
    }

    #[test]
    fn monday_morning() {
        let fv = extract_features(&rec("S1", 41.0, -8.6, "2014-04-07 09:30:00"), &HolidayCalendar::default());
        assert_eq!(fv.day_of_week, 0);
        assert!(fv.is_weekday);
        assert!(!fv.is_holiday);
        assert_eq!(fv.time_of_day, 34_200);
    }

    #[test]
    fn saturday_is_not_a_weekday() {
        let fv = extract_features(&rec("S1", 41.0, -8.6, "2014-04-12 18:00:00"), &HolidayCalendar::default());
        assert_eq!(fv.day_of_week, 5);
        assert!(!fv.is_weekday);
    }

    #[test]
    fn holiday_from_calendar() {
        let cal = HolidayCalendar::parse("# holidays\n2014-04-25\n\n2014-12-25\n", "inline").unwrap();
        assert_eq!(cal.len(), 2);
        let fv = extract_features(&rec("S1", 41.0, -8.6, "2014-04-25 12:00:00"), &cal);
        assert!(fv.is_holiday);
        assert!(HolidayCalendar::parse("2014-13-01\n", "inline").is_err());
    }

    #[test]
    fn bad_timestamp_names_the_record() {
        let err = TraceRecord::parse("taxi-7", "41", "-8", "yesterday", "%Y-%m-%d %H:%M:%S").unwrap_err();
        assert!(err.to_string().contains("taxi-7"));
        assert!(TraceRecord::parse("", "41", "-8", "2014-04-25 12:00:00", "%Y-%m-%d %H:%M:%S").is_err());
    }

    #[test]
    fn instances_use_sorted_vocabulary_and_nearest_cluster() {
        let model = ClusterModel::new(
            vec![GeoPoint::new(41.0, -8.0).unwrap(), GeoPoint::new(42.0, -8.0).unwrap()],
            EARTH_RADIUS_KM,
        )
        .unwrap();
        let records = vec![
            rec("B", 42.0, -8.0, "2014-04-07 09:30:00"),
            rec("A", 41.0, -8.0, "2014-04-07 09:31:00"),
            rec("B", 41.01, -8.0, "2014-04-07 09:32:00"),
        ];
        let set = build_instances(&records, &model, &HolidayCalendar::default());
        let labels: Vec<usize> = set.instances.iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
        let clusters: Vec<usize> = set.instances.iter().map(|i| i.cluster_id).collect();
        assert_eq!(clusters, vec![1, 0, 0]);
        assert!(set.rejects.is_empty());
        for l in 0..set.vocabulary.len() {
            let id = set.vocabulary.service_of(l).unwrap();
            assert_eq!(set.vocabulary.label_of(id), Some(l));
        }
    }

    #[test]
    fn single_record_gets_label_zero() {
        let model = ClusterModel::new(vec![GeoPoint::new(41.0, -8.0).unwrap()], EARTH_RADIUS_KM).unwrap();
        let set = build_instances(&[rec("S1", 41.0, -8.0, "2014-04-07 09:30:00")], &model, &HolidayCalendar::default());
        assert_eq!(set.instances.len(), 1);
        assert_eq!(set.instances[0].label, 0);
    }

    #[test]
    fn encoding_layout() {
        let cfg = fitted(3);
        let fv = FeatureVector {
            lat: 41.0,
            lon: -8.0,
            time_of_day: 0,
            day_of_week: 2,
            is_weekday: true,
            is_holiday: false,
            month: 4,
        };
        let v: Vec<f64> = encode_input(&fv, 1, &cfg).unwrap();
        assert_eq!(v.len(), 2 + 1 + 7 + 1 + 1 + 3);
        assert_eq!(v.len(), cfg.input_len());
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
        assert_eq!(&v[3..10], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[10], 1.0);
        assert_eq!(v[11], 0.0);
        assert_eq!(&v[12..15], &[0.0, 1.0, 0.0]);
        assert!(encode_input::<f64>(&fv, 3, &cfg).is_err());
    }

    #[test]
    fn month_slots_when_enabled() {
        let mut cfg = fitted(2);
        cfg.options.include_month = true;
        let fv = FeatureVector {
            lat: 41.5,
            lon: -8.0,
            time_of_day: 43_200,
            day_of_week: 6,
            is_weekday: false,
            is_holiday: true,
            month: 12,
        };
        let v: Vec<f32> = encode_input(&fv, 0, &cfg).unwrap();
        assert_eq!(v.len(), cfg.input_len());
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], 0.5);
        assert_eq!(v[v.len() - 1], 1.0);
        assert_eq!(v[v.len() - 12..].iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn fit_uses_training_statistics() {
        let fvs: Vec<FeatureVector> = [40.0, 42.0]
            .iter()
            .map(|&lat| FeatureVector {
                lat,
                lon: -8.0,
                time_of_day: 0,
                day_of_week: 0,
                is_weekday: true,
                is_holiday: false,
                month: 1,
            })
            .collect();
        let cfg = EncodingConfig::fit(&fvs, 2, EncodingOptions::default()).unwrap();
        assert_eq!(cfg.lat_mean, 41.0);
        assert_eq!(cfg.lat_std, 1.0);
        // Constant longitude: spread floors to 1.
        assert_eq!(cfg.lon_std, 1.0);
    }
}
