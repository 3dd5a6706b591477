//! Shared domain vocabulary: measurements, sites, metrics and hourly buckets.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A raw, not yet validated record as it arrives from a device or a dataset line.
pub type RawRecord = Map<String, Value>;

/// One connection-quality report sent by a device.
///
/// Values are only produced through [`validate_measurement`] or by code that
/// upholds the same invariants (the simulator); after that they are never
/// mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub device_id: Arc<str>,
    pub site_id: Arc<str>,
    pub timestamp: DateTime<Utc>,
    pub latitude: f64,
    pub longitude: f64,
    pub ping_ms: f64,
    pub upload_mbps: f64,
    pub download_mbps: f64,
}

impl Measurement {
    /// Returns the value of the requested metric.
    pub fn metric(&self, kind: MetricKind) -> f64 {
        metric_of(self, kind)
    }

    /// Re-checks every invariant, reporting the first violated field in
    /// schema order.
    pub fn check(&self) -> Result<(), ValidationError> {
        if self.device_id.is_empty() {
            return Err(ValidationError::BadValue("device_id"));
        }
        if self.site_id.is_empty() {
            return Err(ValidationError::BadValue("site_id"));
        }
        check_coordinates(self.latitude, self.longitude)?;
        check_metric("ping_ms", self.ping_ms, false)?;
        check_metric("upload_mbps", self.upload_mbps, true)?;
        check_metric("download_mbps", self.download_mbps, true)?;
        Ok(())
    }
}

/// Field projection for a metric.
pub fn metric_of(m: &Measurement, kind: MetricKind) -> f64 {
    match kind {
        MetricKind::Ping => m.ping_ms,
        MetricKind::Upload => m.upload_mbps,
        MetricKind::Download => m.download_mbps,
    }
}

/// The record fields in schema order.
pub const FIELDS: [&str; 8] = [
    "device_id",
    "site_id",
    "timestamp",
    "latitude",
    "longitude",
    "ping_ms",
    "upload_mbps",
    "download_mbps",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is out of range")]
    OutOfRange(&'static str),
    #[error("field `{0}` has an unusable value")]
    BadValue(&'static str),
    #[error("field `timestamp` is not an RFC 3339 instant")]
    BadTimestamp,
}

impl ValidationError {
    /// The offending field name.
    pub fn field(&self) -> &'static str {
        match self {
            ValidationError::MissingField(f)
            | ValidationError::OutOfRange(f)
            | ValidationError::BadValue(f) => f,
            ValidationError::BadTimestamp => "timestamp",
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::MissingField(_) => "missing_field",
            ValidationError::OutOfRange(_) => "out_of_range",
            ValidationError::BadValue(_) => "bad_value",
            ValidationError::BadTimestamp => "bad_timestamp",
        }
    }
}

/// Turns a raw field map into a [`Measurement`].
///
/// Numeric fields may be JSON numbers or decimal strings. Timestamps must be
/// RFC 3339; any offset is normalized to UTC. Unknown extra fields are
/// ignored. Fields are checked in schema order and the first problem wins.
pub fn validate_measurement(raw: &RawRecord) -> Result<Measurement, ValidationError> {
    let device_id = text_field(raw, "device_id")?;
    let site_id = text_field(raw, "site_id")?;
    let timestamp = timestamp_field(raw)?;
    let latitude = number_field(raw, "latitude")?;
    let longitude = number_field(raw, "longitude")?;
    let ping_ms = number_field(raw, "ping_ms")?;
    let upload_mbps = number_field(raw, "upload_mbps")?;
    let download_mbps = number_field(raw, "download_mbps")?;

    let m = Measurement {
        device_id: Arc::from(device_id),
        site_id: Arc::from(site_id),
        timestamp,
        latitude,
        longitude,
        ping_ms,
        upload_mbps,
        download_mbps,
    };
    m.check()?;
    Ok(m)
}

fn get<'a>(raw: &'a RawRecord, name: &'static str) -> Result<&'a Value, ValidationError> {
    match raw.get(name) {
        None | Some(Value::Null) => Err(ValidationError::MissingField(name)),
        Some(v) => Ok(v),
    }
}

fn text_field<'a>(raw: &'a RawRecord, name: &'static str) -> Result<&'a str, ValidationError> {
    match get(raw, name)? {
        Value::String(s) if !s.is_empty() => Ok(s),
        _ => Err(ValidationError::BadValue(name)),
    }
}

fn number_field(raw: &RawRecord, name: &'static str) -> Result<f64, ValidationError> {
    let v = match get(raw, name)? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    v.ok_or(ValidationError::BadValue(name))
}

fn timestamp_field(raw: &RawRecord) -> Result<DateTime<Utc>, ValidationError> {
    match get(raw, "timestamp")? {
        Value::String(s) => parse_instant(s).ok_or(ValidationError::BadTimestamp),
        _ => Err(ValidationError::BadTimestamp),
    }
}

/// Parses an RFC 3339 instant and normalizes it to UTC.
pub fn parse_instant(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// Formats an instant as RFC 3339 with a `Z` suffix, keeping sub-second
/// digits only when present.
pub fn format_instant(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

pub(crate) fn check_coordinates(latitude: f64, longitude: f64) -> Result<(), ValidationError> {
    if !(-90.0..=90.0).contains(&latitude) {
        return Err(ValidationError::OutOfRange("latitude"));
    }
    if !(-180.0..=180.0).contains(&longitude) {
        return Err(ValidationError::OutOfRange("longitude"));
    }
    Ok(())
}

fn check_metric(name: &'static str, v: f64, zero_ok: bool) -> Result<(), ValidationError> {
    let ok = v.is_finite() && if zero_ok { v >= 0.0 } else { v > 0.0 };
    if ok {
        Ok(())
    } else {
        Err(ValidationError::OutOfRange(name))
    }
}

/// Configured lifecycle state of a base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteStatus {
    Active,
    Confirmed,
    InProgress,
}

impl SiteStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteStatus::Active => "active",
            SiteStatus::Confirmed => "confirmed",
            SiteStatus::InProgress => "in-progress",
        }
    }
}

/// A base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    #[serde(rename = "id")]
    pub site_id: String,
    pub name: String,
    #[serde(default)]
    pub address: String,
    pub latitude: f64,
    pub longitude: f64,
    pub status: SiteStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SiteError {
    #[error("site id must not be empty")]
    EmptyId,
    #[error("duplicate site id `{0}`")]
    Duplicate(String),
    #[error("site `{0}`: {1}")]
    Coordinates(String, ValidationError),
}

/// Checks a configured site list: non-empty unique ids and valid coordinates.
pub fn validate_sites(sites: &[Site]) -> Result<(), SiteError> {
    let mut seen = std::collections::HashSet::new();
    for s in sites {
        if s.site_id.is_empty() {
            return Err(SiteError::EmptyId);
        }
        if !seen.insert(s.site_id.as_str()) {
            return Err(SiteError::Duplicate(s.site_id.clone()));
        }
        check_coordinates(s.latitude, s.longitude)
            .map_err(|e| SiteError::Coordinates(s.site_id.clone(), e))?;
    }
    Ok(())
}

/// The three connection-quality measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Ping,
    Upload,
    Download,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Ping, MetricKind::Upload, MetricKind::Download];

    /// The API string for this metric.
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ping => "ping",
            MetricKind::Upload => "upload",
            MetricKind::Download => "download",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::Ping => "ms",
            MetricKind::Upload | MetricKind::Download => "Mbps",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown metric `{0}` (expected ping, upload or download)")]
pub struct UnknownMetric(pub String);

impl FromStr for MetricKind {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownMetric(s.to_owned()))
    }
}

/// A one-hour UTC interval `[start, start + 1h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeBucket {
    start: DateTime<Utc>,
}

impl TimeBucket {
    pub const SECONDS: i64 = 3600;

    /// The bucket containing `t`.
    pub fn containing(t: DateTime<Utc>) -> Self {
        Self::from_hour_index(t.timestamp().div_euclid(Self::SECONDS))
    }

    /// Bucket number `index` counted in whole hours from the Unix epoch.
    pub fn from_hour_index(index: i64) -> Self {
        let start = Utc
            .timestamp_opt(index * Self::SECONDS, 0)
            .single()
            .expect("hour index within chrono's range");
        TimeBucket { start }
    }

    pub fn hour_index(&self) -> i64 {
        self.start.timestamp().div_euclid(Self::SECONDS)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(1)
    }
}
