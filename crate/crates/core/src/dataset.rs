//! The dataset file format: newline-delimited JSON, one measurement per line.
//!
//! ```text
//! {"device_id":"d-9f2c01ab77e4","site_id":"SURGEtacoma","timestamp":"2021-02-01T00:15:00Z","latitude":47.2391,"longitude":-122.4470,"ping_ms":23.1,"upload_mbps":8.2,"download_mbps":33.0}
//! ```
//!
//! Writers emit the eight fields in the order above, timestamps as RFC 3339
//! UTC with a `Z` suffix, and numbers in shortest round-trip form. Readers
//! accept any key order, numeric strings, and timestamps with offsets.
//! Blank lines are skipped.

use std::borrow::Borrow;
use std::io::{self, BufRead, Write};

use serde::Serialize;

use crate::model::{format_instant, validate_measurement, Measurement, RawRecord, ValidationError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("not a JSON object: {0}")]
    Syntax(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Serialize)]
struct Line<'a> {
    device_id: &'a str,
    site_id: &'a str,
    timestamp: String,
    latitude: f64,
    longitude: f64,
    ping_ms: f64,
    upload_mbps: f64,
    download_mbps: f64,
}

/// Serializes one measurement as a dataset line, without the trailing newline.
pub fn to_line(m: &Measurement) -> String {
    serde_json::to_string(&Line {
        device_id: &m.device_id,
        site_id: &m.site_id,
        timestamp: format_instant(&m.timestamp),
        latitude: m.latitude,
        longitude: m.longitude,
        ping_ms: m.ping_ms,
        upload_mbps: m.upload_mbps,
        download_mbps: m.download_mbps,
    })
    .expect("finite measurement fields serialize")
}

pub fn parse_line(line: &str) -> Result<Measurement, RecordError> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| RecordError::Syntax(e.to_string()))?;
    Ok(validate_measurement(&raw)?)
}

/// Writes measurements as dataset lines and returns how many were written.
pub fn write_records<W, I>(mut out: W, records: I) -> io::Result<u64>
where
    W: Write,
    I: IntoIterator,
    I::Item: Borrow<Measurement>,
{
    let mut n = 0;
    for m in records {
        out.write_all(to_line(m.borrow()).as_bytes())?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Reads dataset lines, yielding `(line_number, record)` with 1-based line
/// numbers. Blank lines are skipped; I/O errors end the iteration with an
/// error item.
pub fn read_records<R: BufRead>(
    input: R,
) -> impl Iterator<Item = (usize, io::Result<Result<Measurement, RecordError>>)> {
    input
        .lines()
        .enumerate()
        .map(|(idx, line)| (idx + 1, line.map(|l| (l.trim().is_empty(), l))))
        .filter(|(_, r)| !matches!(r, Ok((true, _))))
        .map(|(no, r)| (no, r.map(|(_, l)| parse_line(&l))))
}
