//! Append-only measurement storage with immutable snapshots.
//!
//! Accepted records go to a dataset-format log file (when one is attached)
//! and are synced before `ingest` returns. In memory they are kept per site
//! in fixed-size sealed chunks plus a copy-on-write tail, so a snapshot is a
//! handful of reference-count bumps and later ingests never disturb it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, PoisonError, RwLock};

use chrono::{DateTime, Utc};

use crate::aggregate::Observation;
use crate::dataset::{read_records, to_line, write_records};
use crate::model::{validate_measurement, Measurement, RawRecord, Site, ValidationError};
use crate::projection::{unit_point, UnitPoint};

const CHUNK: usize = 1024;

/// A stored measurement with its ingest sequence number and cached
/// Mercator position.
#[derive(Debug, Clone)]
pub struct Entry {
    seq: u64,
    unit: Option<UnitPoint>,
    measurement: Measurement,
}

impl Entry {
    pub fn sequence(&self) -> u64 {
        self.seq
    }
}

impl Observation for Entry {
    fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    fn unit_point(&self) -> Option<UnitPoint> {
        self.unit
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("range start must be before its end")]
    BadRange,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("could not persist record: {0}")]
    Io(#[from] io::Error),
}

impl IngestError {
    /// The offending field, for rejections caused by the record itself.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            IngestError::Invalid(e) => Some(e.field()),
            IngestError::UnknownSite(_) => Some("site_id"),
            IngestError::Io(_) => None,
        }
    }
}

/// A rejected line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: u64,
    pub errors: Vec<LineError>,
}

/// Site and half-open time predicates for a snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    /// `None` selects every site.
    pub site_ids: Option<BTreeSet<String>>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl QueryFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn sites<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        QueryFilter {
            site_ids: Some(ids.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        match (self.from, self.to) {
            (Some(f), Some(t)) if f >= t => Err(StoreError::BadRange),
            _ => Ok(()),
        }
    }

    pub fn matches(&self, m: &Measurement) -> bool {
        self.site_ids
            .as_ref()
            .is_none_or(|s| s.contains(&*m.site_id))
            && self.from.is_none_or(|f| m.timestamp >= f)
            && self.to.is_none_or(|t| m.timestamp < t)
    }
}

#[derive(Debug, Clone, Default)]
struct SiteLog {
    sealed: Vec<Arc<[Entry]>>,
    tail: Arc<Vec<Entry>>,
    last_seen: Option<DateTime<Utc>>,
}

impl SiteLog {
    fn push(&mut self, e: Entry) {
        let t = e.measurement.timestamp;
        self.last_seen = Some(self.last_seen.map_or(t, |l| l.max(t)));
        let tail = Arc::make_mut(&mut self.tail);
        tail.push(e);
        if tail.len() == CHUNK {
            let full = std::mem::take(tail);
            self.sealed.push(Arc::from(full));
        }
    }

    fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.sealed
            .iter()
            .flat_map(|c| c.iter())
            .chain(self.tail.iter())
    }
}

#[derive(Debug, Default)]
struct State {
    seq: u64,
    sites: BTreeMap<Arc<str>, SiteLog>,
    earliest: Option<DateTime<Utc>>,
    latest: Option<DateTime<Utc>>,
}

struct Writer {
    log: Option<(PathBuf, File)>,
    devices: HashSet<Arc<str>>,
}

/// The measurement store. Ingestion is serialized through one writer;
/// snapshots may be taken concurrently from any thread.
pub struct MeasurementStore {
    sites: Vec<Site>,
    site_keys: HashMap<String, Arc<str>>,
    writer: Mutex<Writer>,
    state: RwLock<State>,
}

impl MeasurementStore {
    /// A store with no backing file.
    pub fn in_memory(sites: &[Site]) -> Self {
        let site_keys: HashMap<String, Arc<str>> = sites
            .iter()
            .map(|s| (s.site_id.clone(), Arc::from(s.site_id.as_str())))
            .collect();
        let state = State {
            sites: site_keys
                .values()
                .map(|k| (k.clone(), SiteLog::default()))
                .collect(),
            ..State::default()
        };
        MeasurementStore {
            sites: sites.to_vec(),
            site_keys,
            writer: Mutex::new(Writer {
                log: None,
                devices: HashSet::new(),
            }),
            state: RwLock::new(state),
        }
    }

    /// Opens (or creates) a log file, replays it, and appends future ingests
    /// to it. Lines that fail validation are reported and skipped.
    pub fn open(path: impl AsRef<Path>, sites: &[Site]) -> Result<(Self, LoadReport), StoreError> {
        let path = path.as_ref().to_path_buf();
        let store = Self::in_memory(sites);
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;

        let report = store.replay(BufReader::new(&file), false).map_err(io_err)?;

        // A crash can leave a torn final line; start the next record on a
        // fresh line.
        let len = file.metadata().map_err(io_err)?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(io_err)?;
            file.read_exact(&mut last).map_err(io_err)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io_err)?;
                file.sync_data().map_err(io_err)?;
            }
        }
        store.lock_writer().log = Some((path, file));
        Ok((store, report))
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.lock_writer().log.as_ref().map(|(p, _)| p.clone())
    }

    /// Validates and stores one raw record, returning its sequence number.
    pub fn ingest(&self, raw: &RawRecord) -> Result<u64, IngestError> {
        self.ingest_measurement(validate_measurement(raw)?)
    }

    /// Stores an already-parsed measurement after re-checking it.
    pub fn ingest_measurement(&self, m: Measurement) -> Result<u64, IngestError> {
        m.check()?;
        let mut w = self.lock_writer();
        let m = self.intern(&mut w, m)?;
        if let Some((_, file)) = w.log.as_mut() {
            let mut line = to_line(&m);
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        Ok(self.publish(std::iter::once(m)))
    }

    /// Bulk ingest with a single sync at the end. Stops at the first invalid
    /// record; everything before it is kept.
    pub fn extend<I>(&self, records: I) -> Result<u64, IngestError>
    where
        I: IntoIterator<Item = Measurement>,
    {
        let mut w = self.lock_writer();
        let mut batch = Vec::with_capacity(CHUNK);
        let mut total = 0u64;
        let mut result = Ok(());
        for m in records {
            match m.check().map_err(IngestError::from).and_then(|()| self.intern(&mut w, m)) {
                Ok(m) => batch.push(m),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
            if batch.len() == CHUNK {
                total += self.flush_batch(&mut w, &mut batch)?;
            }
        }
        total += self.flush_batch(&mut w, &mut batch)?;
        if let Some((_, file)) = w.log.as_mut() {
            file.sync_data()?;
        }
        result.map(|()| total)
    }

    fn flush_batch(&self, w: &mut Writer, batch: &mut Vec<Measurement>) -> Result<u64, IngestError> {
        if batch.is_empty() {
            return Ok(0);
        }
        if let Some((_, file)) = w.log.as_mut() {
            write_records(BufWriter::new(&mut *file), batch.iter())?;
        }
        let n = batch.len() as u64;
        self.publish(batch.drain(..));
        Ok(n)
    }

    /// Appends every valid line of a dataset file, collecting per-line errors.
    pub fn load_dataset(&self, path: impl AsRef<Path>) -> Result<LoadReport, StoreError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::FileNotFound(path.to_path_buf()),
            _ => StoreError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        self.replay(BufReader::new(file), true)
            .map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    fn replay<R: io::BufRead>(&self, input: R, persist: bool) -> io::Result<LoadReport> {
        let mut report = LoadReport::default();
        let mut w = self.lock_writer();
        let mut batch = Vec::with_capacity(CHUNK);
        for (line, parsed) in read_records(input) {
            let outcome = parsed?
                .map_err(|e| e.to_string())
                .and_then(|m| self.intern(&mut w, m).map_err(|e| e.to_string()));
            match outcome {
                Ok(m) => batch.push(m),
                Err(message) => report.errors.push(LineError { line, message }),
            }
            if batch.len() == CHUNK {
                report.loaded += self.replay_batch(&mut w, &mut batch, persist)?;
            }
        }
        report.loaded += self.replay_batch(&mut w, &mut batch, persist)?;
        if persist {
            if let Some((_, file)) = w.log.as_mut() {
                file.sync_data()?;
            }
        }
        Ok(report)
    }

    fn replay_batch(&self, w: &mut Writer, batch: &mut Vec<Measurement>, persist: bool) -> io::Result<u64> {
        if persist {
            if let Some((_, file)) = w.log.as_mut() {
                write_records(BufWriter::new(&mut *file), batch.iter())?;
            }
        }
        let n = batch.len() as u64;
        self.publish(batch.drain(..));
        Ok(n)
    }

    /// Writes every stored record, in ingest order, to `path`.
    pub fn export_dataset(&self, path: impl AsRef<Path>) -> Result<u64, StoreError> {
        let path = path.as_ref();
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let snap = self.snapshot(&QueryFilter::all())?;
        let file = File::create(path).map_err(io_err)?;
        let n = write_records(BufWriter::new(&file), snap.in_ingest_order())
            .map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        Ok(n)
    }

    /// An immutable view of the records matching `filter` as of now.
    pub fn snapshot(&self, filter: &QueryFilter) -> Result<Snapshot, StoreError> {
        filter.validate()?;
        let state = self.state.read().unwrap_or_else(PoisonError::into_inner);
        let parts = state
            .sites
            .iter()
            .filter(|(id, _)| {
                filter
                    .site_ids
                    .as_ref()
                    .is_none_or(|s| s.contains(&***id))
            })
            .map(|(_, log)| log.clone())
            .collect();
        Ok(Snapshot {
            sequence: state.seq,
            parts,
            filter: filter.clone(),
        })
    }

    /// Number of accepted records so far.
    pub fn sequence(&self) -> u64 {
        self.state.read().unwrap_or_else(PoisonError::into_inner).seq
    }

    /// Earliest and latest stored timestamps.
    pub fn time_span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let s = self.state.read().unwrap_or_else(PoisonError::into_inner);
        s.earliest.zip(s.latest)
    }

    /// Latest timestamp reported by a site.
    pub fn last_seen(&self, site_id: &str) -> Option<DateTime<Utc>> {
        let s = self.state.read().unwrap_or_else(PoisonError::into_inner);
        s.sites.get(site_id).and_then(|l| l.last_seen)
    }

    fn lock_writer(&self) -> std::sync::MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(PoisonError::into_inner)
    }

    /// Replaces the record's strings with shared copies and checks the site.
    fn intern(&self, w: &mut Writer, mut m: Measurement) -> Result<Measurement, IngestError> {
        let Some(site) = self.site_keys.get(&*m.site_id) else {
            return Err(IngestError::UnknownSite(m.site_id.to_string()));
        };
        m.site_id = site.clone();
        match w.devices.get(&*m.device_id) {
            Some(d) => m.device_id = d.clone(),
            None => {
                w.devices.insert(m.device_id.clone());
            }
        }
        Ok(m)
    }

    fn publish(&self, records: impl IntoIterator<Item = Measurement>) -> u64 {
        let mut state = self.state.write().unwrap_or_else(PoisonError::into_inner);
        let State {
            seq,
            sites,
            earliest,
            latest,
        } = &mut *state;
        for m in records {
            *seq += 1;
            let t = m.timestamp;
            *earliest = Some(earliest.map_or(t, |e| e.min(t)));
            *latest = Some(latest.map_or(t, |l| l.max(t)));
            let entry = Entry {
                seq: *seq,
                unit: unit_point(m.latitude, m.longitude).ok(),
                measurement: m,
            };
            sites
                .get_mut(&entry.measurement.site_id)
                .expect("site interned before publish")
                .push(entry);
        }
        *seq
    }
}

/// A frozen, filtered view of the store. Cheap to clone and `Send + Sync`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    sequence: u64,
    parts: Vec<SiteLog>,
    filter: QueryFilter,
}

impl Snapshot {
    /// The store sequence number at which the snapshot was taken.
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.parts
            .iter()
            .flat_map(SiteLog::iter)
            .filter(|e| self.filter.matches(&e.measurement))
    }

    pub fn measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.iter().map(|e| &e.measurement)
    }

    /// Matching records sorted by ingest sequence.
    pub fn in_ingest_order(&self) -> Vec<&Measurement> {
        let mut v: Vec<&Entry> = self.iter().collect();
        v.sort_unstable_by_key(|e| e.seq);
        v.into_iter().map(|e| &e.measurement).collect()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }
}
