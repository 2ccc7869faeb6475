//! Delimited trace files, rare-service filtering and seeded splits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::availability::SplitFractions;
use crate::error::{Error, Result};
use crate::features::TraceRecord;
use crate::rng::{permutation, seeded};

/// Which input column plays which role, how timestamps are written and how
/// fields are separated.
///
/// Schema files are plain `key = value` lines; `#` starts a comment:
///
/// ```text
/// service_id = taxi_id
/// lat = latitude
/// lon = longitude
/// timestamp = ts
/// timestamp_format = %Y-%m-%d %H:%M:%S
/// delimiter = ,
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub service_id: String,
    pub lat: String,
    pub lon: String,
    pub timestamp: String,
    /// chrono format string, e.g. `%Y-%m-%d %H:%M:%S`.
    pub timestamp_format: String,
    pub delimiter: u8,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            service_id: "service_id".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            timestamp: "timestamp".into(),
            timestamp_format: "%Y-%m-%d %H:%M:%S".into(),
            delimiter: b',',
        }
    }
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let cols = [&self.service_id, &self.lat, &self.lon, &self.timestamp];
        for (i, c) in cols.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(Error::config("schema column names must not be empty"));
            }
            if cols[..i].contains(c) {
                return Err(Error::config(format!("column {c:?} is mapped to more than one role")));
            }
        }
        if self.timestamp_format.trim().is_empty() {
            return Err(Error::config("schema needs a timestamp_format"));
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut s = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "service_id" => s.service_id = value.into(),
                "lat" => s.lat = value.into(),
                "lon" => s.lon = value.into(),
                "timestamp" => s.timestamp = value.into(),
                "timestamp_format" => s.timestamp_format = value.into(),
                "delimiter" => {
                    s.delimiter = match value {
                        "tab" | "\\t" => b'\t',
                        "space" => b' ',
                        v if v.len() == 1 && v.is_ascii() => v.as_bytes()[0],
                        v => return Err(parse_err(format!("delimiter must be a single ASCII character, got {v:?}"))),
                    }
                }
                other => return Err(parse_err(format!("unknown schema key {other:?}"))),
            }
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(parse_err(format!("duplicate key {key:?}")));
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Text form accepted by [`DatasetSchema::parse`].
    pub fn to_text(&self) -> String {
        let delim = match self.delimiter {
            b'\t' => "tab".to_string(),
            b' ' => "space".to_string(),
            d => (d as char).to_string(),
        };
        format!(
            "service_id = {}\nlat = {}\nlon = {}\ntimestamp = {}\ntimestamp_format = {}\ndelimiter = {delim}\n",
            self.service_id, self.lat, self.lon, self.timestamp, self.timestamp_format
        )
    }
}

/// A data row that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: Vec<TraceRecord>,
    pub rejects: Vec<Reject>,
    /// Data rows read, header excluded; always `records.len() + rejects.len()`.
    pub rows: usize,
}

/// Parses every data row; bad rows end up in `rejects` with their line number.
pub fn ingest(path: &Path, schema: &DatasetSchema) -> Result<IngestReport> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema, &path.display().to_string())
}

pub fn ingest_reader(reader: impl std::io::Read, schema: &DatasetSchema, origin: &str) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(origin, 1, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::data(format!("{origin}: mapped column {name:?} not found in header")))
    };
    let idx = [
        col(&schema.service_id)?,
        col(&schema.lat)?,
        col(&schema.lon)?,
        col(&schema.timestamp)?,
    ];

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                // Malformed bytes: keep going with the next row.
                rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = row.position().map_or(line, |p| p.line());
        let fields: Option<Vec<&str>> = idx.iter().map(|&i| row.get(i)).collect();
        let Some(f) = fields else {
            rejects.push(Reject {
                line,
                reason: format!("expected at least {} fields, found {}", idx.iter().max().unwrap() + 1, row.len()),
            });
            continue;
        };
        match TraceRecord::parse(f[0], f[1], f[2], f[3], &schema.timestamp_format) {
            Ok(r) => records.push(r),
            Err(e) => rejects.push(Reject {
                line,
                reason: e.to_string(),
            }),
        }
    }
    let rows = records.len() + rejects.len();
    if records.is_empty() {
        return Err(Error::data(format!("{origin}: no valid rows ({rows} rejected)")));
    }
    Ok(IngestReport {
        records,
        rejects,
        rows,
    })
}

fn csv_err(origin: &str, line: u64, e: csv::Error) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line: line as usize,
        reason: e.to_string(),
    }
}

/// Drops exact duplicate records, keeping the first occurrence.
pub fn dedup_records(records: Vec<TraceRecord>) -> Vec<TraceRecord> {
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .filter(|r| {
            seen.insert((
                r.service_id.clone(),
                r.point.lat().to_bits(),
                r.point.lon().to_bits(),
                r.timestamp,
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub records: Vec<TraceRecord>,
    /// Removed services and their record counts.
    pub removed: BTreeMap<String, usize>,
    pub warning: Option<String>,
}

/// Removes every service with fewer than `min_count` records.
pub fn filter_rare_services(records: Vec<TraceRecord>, min_count: usize) -> FilterReport {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *counts.entry(&r.service_id).or_default() += 1;
    }
    let removed: BTreeMap<String, usize> = counts
        .into_iter()
        .filter(|&(_, c)| c < min_count)
        .map(|(s, c)| (s.to_string(), c))
        .collect();
    let records: Vec<TraceRecord> = records.into_iter().filter(|r| !removed.contains_key(&r.service_id)).collect();
    let warning = records
        .is_empty()
        .then(|| format!("every service has fewer than {min_count} records; nothing left"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    FilterReport {
        records,
        removed,
        warning,
    }
}

/// Readings of an 80/20 split that sets 10% aside for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitReading {
    /// Validation is 10% of the training portion: 0.72 / 0.08 / 0.20.
    #[default]
    Nested,
    /// Validation is 10% of all data: 0.70 / 0.10 / 0.20.
    OfTotal,
    /// Use the configured fractions.
    Custom,
}

impl SplitReading {
    pub fn fractions(self, custom: SplitFractions) -> SplitFractions {
        match self {
            SplitReading::Nested => SplitFractions {
                train: 0.72,
                val: 0.08,
                test: 0.20,
            },
            SplitReading::OfTotal => SplitFractions {
                train: 0.70,
                val: 0.10,
                test: 0.20,
            },
            SplitReading::Custom => custom,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub warnings: Vec<String>,
}

/// Seeded shuffle, then cut: `round(n·train)` items to train,
/// `round(n·(train+val)) − round(n·train)` to validation, the rest to test.
pub fn split<T: Clone>(items: &[T], fractions: SplitFractions, seed: u64) -> Result<Splits<T>> {
    fractions.validate()?;
    let n = items.len();
    let order = permutation(n, &mut seeded(seed));
    let a = ((n as f64 * fractions.train).round() as usize).min(n);
    let b = ((n as f64 * (fractions.train + fractions.val)).round() as usize).clamp(a, n);
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let (train, val, test) = (pick(0..a), pick(a..b), pick(b..n));
    let warnings: Vec<String> = [("train", train.len()), ("validation", val.len()), ("test", test.len())]
        .iter()
        .filter(|(_, len)| *len == 0)
        .map(|(name, _)| format!("{name} split is empty"))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Splits {
        train,
        val,
        test,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "service_id,lat,lon,timestamp\n\
        a,41.1,-8.6,2024-03-04 10:00:00\n\
        b,41.2,-8.5,2024-03-04 10:01:00\n\
        a,41.1,-8.6,2024-03-04 10:00:00\n";

    fn read(text: &str) -> Result<IngestReport> {
        ingest_reader(text.as_bytes(), &DatasetSchema::default(), "mem")
    }

    #[test]
    fn well_formed_rows_and_duplicates() {
        let r = read(CSV).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.rejects.is_empty());
        assert_eq!(r.records[0], r.records[2]);
        assert_eq!(dedup_records(r.records).len(), 2);
    }

    #[test]
    fn bad_rows_are_reported_with_lines() {
        let text = format!("{CSV}c,91,0,2024-03-04 10:00:00\nd,1,2\ne,1,2,yesterday\n");
        let r = read(&text).unwrap();
        assert_eq!(r.rows, 6);
        assert_eq!(r.records.len() + r.rejects.len(), r.rows);
        assert_eq!(r.rejects.len(), 3);
        assert_eq!(r.rejects[0].line, 5);
        assert!(r.rejects[0].reason.contains("latitude out of range"), "{}", r.rejects[0].reason);
        assert_eq!(r.rejects[1].line, 6);
        assert_eq!(r.rejects[2].line, 7);
    }

    #[test]
    fn missing_column_and_no_valid_rows() {
        assert!(read("service_id,lat,timestamp\na,1,x\n").unwrap_err().to_string().contains("\"lon\""));
        assert!(matches!(read("service_id,lat,lon,timestamp\na,95,0,x\n"), Err(Error::Data(_))));
    }

    #[test]
    fn schema_text() {
        let s = DatasetSchema::parse(
            "# taxi\nservice_id = TAXI_ID\nlat=LAT\nlon = LON\ntimestamp = TS\ntimestamp_format = %s\ndelimiter = tab\n",
            "schema",
        )
        .unwrap();
        assert_eq!(s.delimiter, b'\t');
        assert_eq!(s.service_id, "TAXI_ID");
        assert_eq!(DatasetSchema::parse(&s.to_text(), "again").unwrap(), s);
        assert!(DatasetSchema::parse("lat = x\nlon = x\n", "s").is_err());
        assert!(matches!(DatasetSchema::parse("colour = red\n", "s"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn semicolon_delimiter() {
        let schema = DatasetSchema {
            delimiter: b';',
            timestamp_format: "%d/%m/%Y %H:%M".into(),
            ..DatasetSchema::default()
        };
        let r = ingest_reader("lat;lon;service_id;timestamp\n1.5;2.5;x;04/03/2024 10:07\n".as_bytes(), &schema, "m")
            .unwrap();
        assert_eq!(r.records[0].service_id, "x");
        assert_eq!(r.records[0].point.lon(), 2.5);
    }

    #[test]
    fn rare_services() {
        let recs = read(CSV).unwrap().records;
        assert_eq!(filter_rare_services(recs.clone(), 1).records.len(), 3);
        let f = filter_rare_services(recs.clone(), 2);
        assert_eq!(f.records.len(), 2);
        assert_eq!(f.removed.get("b"), Some(&1));
        let all = filter_rare_services(recs, 3);
        assert!(all.records.is_empty() && all.warning.is_some());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..100).collect();
        let s = split(&items, SplitReading::Nested.fractions(SplitFractions::default()), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (72, 8, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        let again = split(&items, SplitFractions::default(), 3).unwrap();
        assert_eq!(again.train, s.train);
        let o = split(&items, SplitReading::OfTotal.fractions(SplitFractions::default()), 3).unwrap();
        assert_eq!((o.train.len(), o.val.len(), o.test.len()), (70, 10, 20));
        let only = split(
            &items,
            SplitFractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            1,
        )
        .unwrap();
        assert_eq!(only.train.len(), 100);
        assert_eq!(only.warnings.len(), 2);
    }
}
