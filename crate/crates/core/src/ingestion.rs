//! Photo metadata ingestion.
//!
//! Input is UTF-8, comma-delimited CSV with a header row. Columns bind by
//! header name, so order is free; `photo_id,user_id,lat,lon,timestamp` are
//! required and `url` is optional. Malformed rows become [`Rejection`]s
//! unless strict mode is on.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, TimeZone, Timelike, Utc};
use thiserror::Error;

use crate::util::format_ts;

pub const REQUIRED_COLUMNS: [&str; 5] = ["photo_id", "user_id", "lat", "lon", "timestamp"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: RejectReason },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One geotagged, timestamped photo.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub user_id: String,
    pub lat: f64,
    pub lon: f64,
    /// UTC, truncated to whole seconds.
    pub timestamp: DateTime<Utc>,
    pub url: Option<String>,
}

/// Why a row did not become a [`PhotoRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    MissingField(&'static str),
    EmptyPhotoId,
    EmptyUserId,
    UnparseableLat,
    LatOutOfRange,
    UnparseableLon,
    LonOutOfRange,
    UnparseableTimestamp,
    TimestampTooEarly,
    DuplicatePhotoId,
    MalformedCsv(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingField(name) => write!(f, "missing field {name}"),
            RejectReason::EmptyPhotoId => f.write_str("empty photo_id"),
            RejectReason::EmptyUserId => f.write_str("empty user_id"),
            RejectReason::UnparseableLat => f.write_str("unparseable lat"),
            RejectReason::LatOutOfRange => f.write_str("lat out of range"),
            RejectReason::UnparseableLon => f.write_str("unparseable lon"),
            RejectReason::LonOutOfRange => f.write_str("lon out of range"),
            RejectReason::UnparseableTimestamp => f.write_str("unparseable timestamp"),
            RejectReason::TimestampTooEarly => f.write_str("timestamp before 1990-01-01"),
            RejectReason::DuplicatePhotoId => f.write_str("duplicate photo_id"),
            RejectReason::MalformedCsv(msg) => write!(f, "malformed csv: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub raw: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<PhotoRecord>,
    pub rejected: Vec<Rejection>,
}

impl Dataset {
    pub fn from_records(records: Vec<PhotoRecord>) -> Self {
        Dataset { records, rejected: Vec::new() }
    }

    pub fn row_count(&self) -> usize {
        self.records.len() + self.rejected.len()
    }
}

/// The required fields of one input row, as raw text.
#[derive(Debug, Clone, Copy)]
pub struct RawRecord<'a> {
    pub photo_id: &'a str,
    pub user_id: &'a str,
    pub lat: &'a str,
    pub lon: &'a str,
    pub timestamp: &'a str,
    pub url: Option<&'a str>,
}

fn earliest_timestamp() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(1990, 1, 1, 0, 0, 0).unwrap()
}

/// Parses an ISO-8601 instant. Inputs without an offset are taken as UTC;
/// sub-second precision is dropped.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    let parsed = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.with_timezone(&Utc)
    } else {
        const NAIVE: [&str; 2] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"];
        let naive = NAIVE
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())?;
        Utc.from_utc_datetime(&naive)
    };
    parsed.with_nanosecond(0)
}

pub fn validate_record(raw: &RawRecord<'_>) -> Result<PhotoRecord, RejectReason> {
    let photo_id = raw.photo_id.trim();
    if photo_id.is_empty() {
        return Err(RejectReason::EmptyPhotoId);
    }
    let user_id = raw.user_id.trim();
    if user_id.is_empty() {
        return Err(RejectReason::EmptyUserId);
    }
    let lat: f64 = raw.lat.trim().parse().map_err(|_| RejectReason::UnparseableLat)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(RejectReason::LatOutOfRange);
    }
    let lon: f64 = raw.lon.trim().parse().map_err(|_| RejectReason::UnparseableLon)?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err(RejectReason::LonOutOfRange);
    }
    let timestamp = parse_timestamp(raw.timestamp).ok_or(RejectReason::UnparseableTimestamp)?;
    if timestamp < earliest_timestamp() {
        return Err(RejectReason::TimestampTooEarly);
    }
    let url = raw
        .url
        .map(str::trim)
        .filter(|u| !u.is_empty())
        .map(str::to_owned);
    Ok(PhotoRecord {
        photo_id: photo_id.to_owned(),
        user_id: user_id.to_owned(),
        lat,
        lon,
        timestamp,
        url,
    })
}

pub fn parse_photo_csv(path: impl AsRef<Path>, strict: bool) -> Result<Dataset, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::MissingFile(path.to_owned()),
        _ => IngestError::Io(e),
    })?;
    parse_photo_reader(file, strict)
}

struct Columns {
    photo_id: usize,
    user_id: usize,
    lat: usize,
    lon: usize,
    timestamp: usize,
    url: Option<usize>,
}

impl Columns {
    fn bind(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_owned()));
        Ok(Columns {
            photo_id: need("photo_id")?,
            user_id: need("user_id")?,
            lat: need("lat")?,
            lon: need("lon")?,
            timestamp: need("timestamp")?,
            url: find("url"),
        })
    }

    fn raw<'a>(&self, row: &'a csv::StringRecord) -> Result<RawRecord<'a>, RejectReason> {
        let get = |idx: usize, name: &'static str| row.get(idx).ok_or(RejectReason::MissingField(name));
        Ok(RawRecord {
            photo_id: get(self.photo_id, "photo_id")?,
            user_id: get(self.user_id, "user_id")?,
            lat: get(self.lat, "lat")?,
            lon: get(self.lon, "lon")?,
            timestamp: get(self.timestamp, "timestamp")?,
            url: self.url.and_then(|i| row.get(i)),
        })
    }
}

fn raw_line(row: &csv::StringRecord) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if w.write_record(row).is_err() {
        return row.iter().collect::<Vec<_>>().join(",");
    }
    let bytes = w.into_inner().unwrap_or_default();
    String::from_utf8_lossy(&bytes).trim_end_matches('\n').to_owned()
}

pub fn parse_photo_reader<R: Read>(reader: R, strict: bool) -> Result<Dataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = Columns::bind(&header)?;

    let mut seen = HashSet::new();
    let mut dataset = Dataset::default();
    let mut row = csv::StringRecord::new();
    let mut last_line = 1;
    loop {
        let (line, outcome) = match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let line = row.position().map_or(last_line + 1, |p| p.line());
                let outcome = cols.raw(&row).and_then(|raw| validate_record(&raw)).and_then(|rec| {
                    if seen.contains(&rec.photo_id) {
                        Err(RejectReason::DuplicatePhotoId)
                    } else {
                        Ok(rec)
                    }
                });
                (line, outcome.map_err(|reason| (raw_line(&row), reason)))
            }
            Err(e) => {
                let line = e.position().map_or(last_line + 1, |p| p.line());
                if !matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                    return Err(e.into());
                }
                (line, Err((String::new(), RejectReason::MalformedCsv(e.to_string()))))
            }
        };
        last_line = line;
        match outcome {
            Ok(rec) => {
                seen.insert(rec.photo_id.clone());
                dataset.records.push(rec);
            }
            Err((_, reason)) if strict => return Err(IngestError::MalformedRow { line, reason }),
            Err((raw, reason)) => dataset.rejected.push(Rejection { line, raw, reason }),
        }
    }
    Ok(dataset)
}

/// Writes records in the canonical column order. Re-parsing the output yields
/// the same records.
pub fn write_photo_csv<W: Write>(records: &[PhotoRecord], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["photo_id", "user_id", "lat", "lon", "timestamp", "url"])?;
    for r in records {
        w.write_record([
            r.photo_id.as_str(),
            r.user_id.as_str(),
            &r.lat.to_string(),
            &r.lon.to_string(),
            &format_ts(&r.timestamp),
            r.url.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejections_csv<W: Write>(rejected: &[Rejection], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["line", "reason", "raw"])?;
    for r in rejected {
        w.write_record([r.line.to_string(), r.reason.to_string(), r.raw.clone()])?;
    }
    w.flush()?;
    Ok(())
}
