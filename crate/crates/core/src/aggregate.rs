//! Server-side aggregates: grid heatmaps, hourly per-site series and per-site
//! summaries.
//!
//! Every heatmap cell backed by fewer than `k_min` measurements is dropped
//! before it leaves this module, and requests whose cells would be smaller
//! on the ground than `min_cell_meters` are refused outright.

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};

use crate::model::{Measurement, MetricKind, Site, SiteStatus, TimeBucket};
use crate::projection::{cell_of, unit_point, CellIndex, GridError, GridSpec, UnitPoint};

pub const DEFAULT_K_MIN: u32 = 5;
pub const DEFAULT_MIN_CELL_METERS: f64 = 300.0;

/// Above this many slots, accumulation switches from a dense vector to a map.
const DENSE_LIMIT: usize = 1 << 22;

/// Anything that can be aggregated: a measurement, optionally carrying its
/// precomputed Mercator position.
pub trait Observation {
    fn measurement(&self) -> &Measurement;

    fn unit_point(&self) -> Option<UnitPoint> {
        let m = self.measurement();
        unit_point(m.latitude, m.longitude).ok()
    }
}

impl Observation for Measurement {
    fn measurement(&self) -> &Measurement {
        self
    }
}

/// Suppression thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyPolicy {
    pub k_min: u32,
    pub min_cell_meters: f64,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        PrivacyPolicy {
            k_min: DEFAULT_K_MIN,
            min_cell_meters: DEFAULT_MIN_CELL_METERS,
        }
    }
}

/// Trailing windows used by site summaries, measured back from "now".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Windows {
    pub summary: Duration,
    pub availability: Duration,
}

impl Default for Windows {
    fn default() -> Self {
        Windows {
            summary: Duration::hours(24),
            availability: Duration::minutes(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("invalid grid: {0}")]
    InvalidGrid(#[from] GridError),
    #[error("grid cells of {cell_meters:.0} m are below the {floor_meters:.0} m privacy floor")]
    GridTooFine { cell_meters: f64, floor_meters: f64 },
    #[error("k_min must be at least 1")]
    BadKMin,
    #[error("at least one site must be selected")]
    NoSites,
    #[error("range start must be before its end")]
    BadRange,
    #[error("unknown site `{0}`")]
    UnknownSite(String),
}

/// One surviving grid box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub index: CellIndex,
    pub value: f64,
    pub count: u64,
}

/// One hourly sample of a site's series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub bucket: TimeBucket,
    pub value: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteSeries {
    pub site_id: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteSummary {
    pub site_id: String,
    pub status: SiteStatus,
    pub available: bool,
    pub avg_ping_ms: Option<f64>,
    pub avg_upload_mbps: Option<f64>,
    pub avg_download_mbps: Option<f64>,
    /// Measurements inside the summary window.
    pub count: u64,
    pub last_seen: Option<DateTime<Utc>>,
}

/// Sum and count per slot, dense when the slot space is small.
enum Accumulator {
    Dense(Vec<(f64, u64)>),
    Sparse(HashMap<u64, (f64, u64)>),
}

impl Accumulator {
    fn new(slots: u64) -> Self {
        match usize::try_from(slots) {
            Ok(n) if n <= DENSE_LIMIT => Accumulator::Dense(vec![(0.0, 0); n]),
            _ => Accumulator::Sparse(HashMap::new()),
        }
    }

    #[inline]
    fn add(&mut self, slot: u64, v: f64) {
        let e = match self {
            Accumulator::Dense(d) => &mut d[slot as usize],
            Accumulator::Sparse(s) => s.entry(slot).or_insert((0.0, 0)),
        };
        e.0 += v;
        e.1 += 1;
    }

    /// Occupied slots in ascending order as `(slot, mean, count)`.
    fn into_means(self) -> Vec<(u64, f64, u64)> {
        match self {
            Accumulator::Dense(d) => d
                .into_iter()
                .enumerate()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(slot, (sum, n))| (slot as u64, sum / n as f64, n))
                .collect(),
            Accumulator::Sparse(s) => {
                let mut v: Vec<_> = s
                    .into_iter()
                    .map(|(slot, (sum, n))| (slot, sum / n as f64, n))
                    .collect();
                v.sort_unstable_by_key(|e| e.0);
                v
            }
        }
    }
}

/// Checks a grid request against validity rules and the privacy floor.
pub fn check_grid(grid: &GridSpec, policy: &PrivacyPolicy) -> Result<(), AggregateError> {
    grid.validate()?;
    if policy.k_min == 0 {
        return Err(AggregateError::BadKMin);
    }
    let cell_meters = grid.min_cell_meters();
    if !(cell_meters >= policy.min_cell_meters) {
        return Err(AggregateError::GridTooFine {
            cell_meters,
            floor_meters: policy.min_cell_meters,
        });
    }
    Ok(())
}

/// Mean of `metric` per grid box for measurements from `sites`.
///
/// Cells with fewer than `policy.k_min` contributors are omitted. The result
/// is ordered row-major by `(j, i)`.
pub fn heatmap<'a, T, I>(
    data: I,
    sites: &BTreeSet<String>,
    metric: MetricKind,
    grid: &GridSpec,
    policy: &PrivacyPolicy,
) -> Result<Vec<HeatmapCell>, AggregateError>
where
    T: Observation + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if sites.is_empty() {
        return Err(AggregateError::NoSites);
    }
    check_grid(grid, policy)?;
    let wanted: HashSet<&str> = sites.iter().map(String::as_str).collect();
    let columns = u64::from(grid.columns());
    let mut acc = Accumulator::new(columns * u64::from(grid.rows()));

    for obs in data {
        let m = obs.measurement();
        if !wanted.contains(&*m.site_id) {
            continue;
        }
        let Some(unit) = obs.unit_point() else {
            continue;
        };
        if let Some(c) = cell_of(unit.at_zoom(grid.zoom), grid) {
            acc.add(u64::from(c.j) * columns + u64::from(c.i), m.metric(metric));
        }
    }

    let k_min = u64::from(policy.k_min);
    Ok(acc
        .into_means()
        .into_iter()
        .filter(|&(_, _, n)| n >= k_min)
        .map(|(slot, value, count)| HeatmapCell {
            index: CellIndex {
                i: (slot % columns) as u32,
                j: (slot / columns) as u32,
            },
            value,
            count,
        })
        .collect())
}

/// Hourly means of `metric` per site over `[from, to)`.
///
/// Returns one series per requested site in site-id order; hours without
/// measurements are absent.
pub fn timeseries<'a, T, I>(
    data: I,
    sites: &BTreeSet<String>,
    metric: MetricKind,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<Vec<SiteSeries>, AggregateError>
where
    T: Observation + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if sites.is_empty() {
        return Err(AggregateError::NoSites);
    }
    if from >= to {
        return Err(AggregateError::BadRange);
    }
    let first = TimeBucket::containing(from).hour_index();
    // The bucket holding the last instant strictly before `to`.
    let last = TimeBucket::containing(to - Duration::nanoseconds(1)).hour_index();
    let hours = (last - first + 1) as u64;

    let mut per_site: HashMap<&str, Accumulator> = sites
        .iter()
        .map(|s| (s.as_str(), Accumulator::new(hours)))
        .collect();

    for obs in data {
        let m = obs.measurement();
        if m.timestamp < from || m.timestamp >= to {
            continue;
        }
        if let Some(acc) = per_site.get_mut(&*m.site_id) {
            let slot = TimeBucket::containing(m.timestamp).hour_index() - first;
            acc.add(slot as u64, m.metric(metric));
        }
    }

    Ok(sites
        .iter()
        .map(|site| {
            let acc = per_site.remove(site.as_str()).expect("one accumulator per site");
            SiteSeries {
                site_id: site.clone(),
                points: acc
                    .into_means()
                    .into_iter()
                    .map(|(slot, value, count)| SeriesPoint {
                        bucket: TimeBucket::from_hour_index(first + slot as i64),
                        value,
                        count,
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Tooltip summary for one configured site as of `now`.
///
/// Averages cover `[now - windows.summary, now]`; the site is available when
/// it reported anything in `[now - windows.availability, now]`.
pub fn site_summary<'a, T, I>(
    data: I,
    sites: &[Site],
    site_id: &str,
    now: DateTime<Utc>,
    windows: &Windows,
) -> Result<SiteSummary, AggregateError>
where
    T: Observation + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let site = sites
        .iter()
        .find(|s| s.site_id == site_id)
        .ok_or_else(|| AggregateError::UnknownSite(site_id.to_owned()))?;
    let summary_from = now - windows.summary;
    let available_from = now - windows.availability;

    let mut sums = [0.0f64; 3];
    let mut count = 0u64;
    let mut available = false;
    let mut last_seen: Option<DateTime<Utc>> = None;
    for obs in data {
        let m = obs.measurement();
        if &*m.site_id != site_id {
            continue;
        }
        last_seen = Some(last_seen.map_or(m.timestamp, |t| t.max(m.timestamp)));
        if m.timestamp > now {
            continue;
        }
        if m.timestamp >= available_from {
            available = true;
        }
        if m.timestamp >= summary_from {
            sums[0] += m.ping_ms;
            sums[1] += m.upload_mbps;
            sums[2] += m.download_mbps;
            count += 1;
        }
    }
    let mean = |s: f64| (count > 0).then(|| s / count as f64);
    Ok(SiteSummary {
        site_id: site.site_id.clone(),
        status: site.status,
        available,
        avg_ping_ms: mean(sums[0]),
        avg_upload_mbps: mean(sums[1]),
        avg_download_mbps: mean(sums[2]),
        count,
        last_seen,
    })
}
