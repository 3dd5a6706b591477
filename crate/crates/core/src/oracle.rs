//! Brute-force reference aggregation, written independently of
//! [`crate::aggregate`] and [`crate::projection`], and a checker that compares
//! the two on random requests.
//!
//! The reference side transcribes the Mercator formula in its `sin` form,
//! groups with ordered maps instead of slot arithmetic, and truncates
//! timestamps to hours with plain integer math.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{self, PrivacyPolicy};
use crate::model::{format_instant, Measurement, MetricKind, Site};
use crate::projection::GridSpec;
use crate::store::Snapshot;

/// Reference world-pixel position, or `None` outside the Mercator square.
pub fn reference_pixel(latitude: f64, longitude: f64, zoom: u8) -> Option<(f64, f64)> {
    let lat_limit = (PI.sinh()).atan().to_degrees();
    if latitude.abs() > lat_limit || longitude.abs() > 180.0 {
        return None;
    }
    let size = 256.0 * 2f64.powi(i32::from(zoom));
    let s = latitude.to_radians().sin();
    let x = (longitude + 180.0) / 360.0 * size;
    let y = (0.5 - ((1.0 + s) / (1.0 - s)).ln() / (4.0 * PI)) * size;
    Some((x, y))
}

fn value_of(m: &Measurement, metric: MetricKind) -> f64 {
    match metric {
        MetricKind::Ping => m.ping_ms,
        MetricKind::Upload => m.upload_mbps,
        MetricKind::Download => m.download_mbps,
    }
}

/// Every occupied cell keyed by `(j, i)` with `(mean, count)`, before
/// suppression.
pub fn reference_heatmap<'a>(
    data: impl IntoIterator<Item = &'a Measurement>,
    sites: &BTreeSet<String>,
    metric: MetricKind,
    grid: &GridSpec,
) -> BTreeMap<(u32, u32), (f64, u64)> {
    let mut groups: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    let cell = f64::from(grid.cell_px);
    for m in data {
        if !sites.contains(&*m.site_id) {
            continue;
        }
        let Some((x, y)) = reference_pixel(m.latitude, m.longitude, grid.zoom) else {
            continue;
        };
        let (dx, dy) = (x - grid.origin_x, y - grid.origin_y);
        if dx < 0.0 || dy < 0.0 || dx >= f64::from(grid.width_px) || dy >= f64::from(grid.height_px) {
            continue;
        }
        let key = ((dy / cell).floor() as u32, (dx / cell).floor() as u32);
        groups.entry(key).or_default().push(value_of(m, metric));
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, (v.iter().sum::<f64>() / v.len() as f64, v.len() as u64)))
        .collect()
}

/// Hourly `(mean, count)` for one site keyed by Unix hour number.
pub fn reference_hourly<'a>(
    data: impl IntoIterator<Item = &'a Measurement>,
    site_id: &str,
    metric: MetricKind,
) -> BTreeMap<i64, (f64, u64)> {
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for m in data {
        if &*m.site_id != site_id {
            continue;
        }
        let secs = m.timestamp.timestamp();
        let hour = (secs - secs.rem_euclid(3600)) / 3600;
        groups.entry(hour).or_default().push(value_of(m, metric));
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, (v.iter().sum::<f64>() / v.len() as f64, v.len() as u64)))
        .collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Outcome of an oracle comparison run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub grids_checked: usize,
    pub cells_compared: usize,
    pub series_checked: usize,
    pub points_compared: usize,
    pub mismatches: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Draws a grid over the area around a random site whose cells sit at or
/// just above the privacy floor.
pub fn random_grid(rng: &mut impl Rng, sites: &[Site], policy: &PrivacyPolicy) -> GridSpec {
    let site = &sites[rng.random_range(0..sites.len())];
    let zoom = rng.random_range(9..=15u8);
    let size = 256.0 * 2f64.powi(i32::from(zoom));
    let (sx, sy) = reference_pixel(site.latitude, site.longitude, zoom).expect("site inside Mercator square");
    let width_px = rng.random_range(128..=1024u32);
    let height_px = rng.random_range(128..=1024u32);
    let clamp = |v: f64, extent: u32| v.clamp(0.0, size - f64::from(extent)).floor();
    let mut grid = GridSpec {
        zoom,
        origin_x: clamp(sx - rng.random_range(0.0..f64::from(width_px)), width_px),
        origin_y: clamp(sy - rng.random_range(0.0..f64::from(height_px)), height_px),
        width_px,
        height_px,
        cell_px: 1,
    };
    // Smallest admissible cell, then stretch it by up to 3x.
    let per_px = grid.min_cell_meters();
    let floor_px = (policy.min_cell_meters / per_px).ceil().max(1.0) as u32;
    grid.cell_px = floor_px;
    while aggregate::check_grid(&grid, policy).is_err() {
        grid.cell_px += 1;
    }
    grid.cell_px += rng.random_range(0..=2 * grid.cell_px);
    grid
}

/// Compares production heatmaps against [`reference_heatmap`] on `trials`
/// random grids and metrics, and production time series against
/// [`reference_hourly`] for every site and metric over the full span.
///
/// Cell index sets and counts must match exactly; values within
/// `rel_tolerance` relative error.
pub fn check(
    snapshot: &Snapshot,
    sites: &[Site],
    policy: &PrivacyPolicy,
    trials: usize,
    seed: u64,
    rel_tolerance: f64,
) -> OracleReport {
    let mut report = OracleReport::default();
    if sites.is_empty() {
        return report;
    }
    let data: Vec<&Measurement> = snapshot.measurements().collect();
    let all_ids: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for trial in 0..trials {
        let grid = random_grid(&mut rng, sites, policy);
        let metric = MetricKind::ALL[rng.random_range(0..3)];
        // A random non-empty subset of sites.
        let mut selected: BTreeSet<String> = all_ids
            .iter()
            .filter(|_| rng.random_bool(0.5))
            .cloned()
            .collect();
        if selected.is_empty() {
            selected.insert(all_ids[rng.random_range(0..all_ids.len())].clone());
        }

        // The floor must hold one pixel below the admissible size.
        if grid.cell_px > 1 {
            let finer = GridSpec {
                cell_px: (policy.min_cell_meters / grid.min_cell_meters() * f64::from(grid.cell_px))
                    .ceil() as u32
                    - 1,
                ..grid
            };
            if finer.cell_px >= 1 && aggregate::check_grid(&finer, policy).is_ok() {
                report.mismatches.push(format!("trial {trial}: {finer:?} passed the privacy floor"));
            }
        }

        let produced = match aggregate::heatmap(snapshot.iter(), &selected, metric, &grid, policy) {
            Ok(cells) => cells,
            Err(e) => {
                report.mismatches.push(format!("trial {trial}: heatmap failed on {grid:?}: {e}"));
                continue;
            }
        };
        let expected: Vec<((u32, u32), (f64, u64))> =
            reference_heatmap(data.iter().copied(), &selected, metric, &grid)
                .into_iter()
                .filter(|(_, (_, n))| *n >= u64::from(policy.k_min))
                .collect();
        report.grids_checked += 1;
        if produced.len() != expected.len() {
            report.mismatches.push(format!(
                "trial {trial}: {} cells produced, {} expected on {grid:?}",
                produced.len(),
                expected.len()
            ));
            continue;
        }
        for (cell, ((j, i), (mean, count))) in produced.iter().zip(&expected) {
            report.cells_compared += 1;
            if (cell.index.j, cell.index.i) != (*j, *i) || cell.count != *count || !close(cell.value, *mean, rel_tolerance) {
                report.mismatches.push(format!(
                    "trial {trial}: cell ({}, {}) = {} x{} but reference ({i}, {j}) = {mean} x{count}",
                    cell.index.i, cell.index.j, cell.value, cell.count
                ));
            }
        }
    }

    if let (Some(first), Some(last)) = (
        data.iter().map(|m| m.timestamp).min(),
        data.iter().map(|m| m.timestamp).max(),
    ) {
        let to = last + chrono::Duration::seconds(1);
        let selected: BTreeSet<String> = all_ids.iter().cloned().collect();
        for metric in MetricKind::ALL {
            match aggregate::timeseries(snapshot.iter(), &selected, metric, first, to) {
                Ok(series) => {
                    for s in series {
                        report.series_checked += 1;
                        compare_series(&mut report, &data, &s, metric, first, to, rel_tolerance);
                    }
                }
                Err(e) => report.mismatches.push(format!("timeseries failed: {e}")),
            }
        }
    }
    report
}

fn compare_series(
    report: &mut OracleReport,
    data: &[&Measurement],
    series: &aggregate::SiteSeries,
    metric: MetricKind,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    rel: f64,
) {
    let expected = reference_hourly(
        data.iter().copied().filter(|m| m.timestamp >= from && m.timestamp < to),
        &series.site_id,
        metric,
    );
    if expected.len() != series.points.len() {
        report.mismatches.push(format!(
            "{} {metric}: {} hourly points produced, {} expected",
            series.site_id,
            series.points.len(),
            expected.len()
        ));
        return;
    }
    for (p, (hour, (mean, count))) in series.points.iter().zip(&expected) {
        report.points_compared += 1;
        if p.bucket.start().timestamp() != hour * 3600 || p.count != *count || !close(p.value, *mean, rel) {
            report.mismatches.push(format!(
                "{} {metric} at {}: {} x{} vs reference {mean} x{count}",
                series.site_id,
                format_instant(&p.bucket.start()),
                p.value,
                p.count
            ));
        }
    }
}
