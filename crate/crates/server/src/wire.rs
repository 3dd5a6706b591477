//! JSON response bodies.
//!
//! Field order is fixed by the struct definitions and every float is rounded
//! to six significant digits before serialization, so equal aggregates always
//! produce byte-identical bodies.

use coverage_core::aggregate::{HeatmapCell, SiteSeries, SiteSummary};
use coverage_core::model::{format_instant, MetricKind, Site, SiteStatus};
use coverage_core::projection::GridSpec;
use serde::Serialize;

/// Rounds to six significant digits.
pub fn sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

#[derive(Debug, Serialize)]
pub struct ErrorBody<'a> {
    pub code: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'a str>,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct SiteBody<'a> {
    pub id: &'a str,
    pub name: &'a str,
    pub address: &'a str,
    pub latitude: f64,
    pub longitude: f64,
    pub status: SiteStatus,
    pub available: bool,
}

impl<'a> SiteBody<'a> {
    pub fn new(site: &'a Site, available: bool) -> Self {
        SiteBody {
            id: &site.site_id,
            name: &site.name,
            address: &site.address,
            latitude: site.latitude,
            longitude: site.longitude,
            status: site.status,
            available,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SitesBody<'a> {
    pub sites: Vec<SiteBody<'a>>,
}

#[derive(Debug, Serialize)]
pub struct CellBody {
    pub i: u32,
    pub j: u32,
    pub value: f64,
    pub count: u64,
}

#[derive(Debug, Serialize)]
pub struct HeatmapBody {
    pub metric: &'static str,
    pub unit: &'static str,
    pub zoom: u8,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub cell_px: u32,
    pub k_min: u32,
    pub cells: Vec<CellBody>,
}

impl HeatmapBody {
    pub fn new(metric: MetricKind, grid: &GridSpec, k_min: u32, cells: &[HeatmapCell]) -> Self {
        HeatmapBody {
            metric: metric.as_str(),
            unit: metric.unit(),
            zoom: grid.zoom,
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            width_px: grid.width_px,
            height_px: grid.height_px,
            cell_px: grid.cell_px,
            k_min,
            cells: cells
                .iter()
                .map(|c| CellBody {
                    i: c.index.i,
                    j: c.index.j,
                    value: sig6(c.value),
                    count: c.count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PointBody {
    pub t: String,
    pub value: f64,
    pub count: u64,
}

#[derive(Debug, Serialize)]
pub struct SeriesBody {
    pub site_id: String,
    pub points: Vec<PointBody>,
}

#[derive(Debug, Serialize)]
pub struct TimeseriesBody {
    pub metric: &'static str,
    pub unit: &'static str,
    pub from: Option<String>,
    pub to: Option<String>,
    pub series: Vec<SeriesBody>,
}

impl From<SiteSeries> for SeriesBody {
    fn from(s: SiteSeries) -> Self {
        SeriesBody {
            site_id: s.site_id,
            points: s
                .points
                .iter()
                .map(|p| PointBody {
                    t: format_instant(&p.bucket.start()),
                    value: sig6(p.value),
                    count: p.count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SummaryBody {
    pub site_id: String,
    pub status: SiteStatus,
    pub available: bool,
    pub avg_ping_ms: Option<f64>,
    pub avg_upload_mbps: Option<f64>,
    pub avg_download_mbps: Option<f64>,
    pub count: u64,
    pub last_seen: Option<String>,
    pub as_of: Option<String>,
}

impl SummaryBody {
    pub fn new(s: SiteSummary, as_of: Option<String>) -> Self {
        SummaryBody {
            site_id: s.site_id,
            status: s.status,
            available: s.available,
            avg_ping_ms: s.avg_ping_ms.map(sig6),
            avg_upload_mbps: s.avg_upload_mbps.map(sig6),
            avg_download_mbps: s.avg_download_mbps.map(sig6),
            count: s.count,
            last_seen: s.last_seen.as_ref().map(format_instant),
            as_of,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IngestedBody {
    pub sequence: u64,
}

#[derive(Debug, Serialize)]
pub struct HealthBody {
    pub status: &'static str,
    pub records: u64,
}
