//! Privacy-preserving coverage aggregation for community cellular networks.
//!
//! Devices report latency and throughput together with where and when they
//! measured it. This crate validates and stores those reports, bins them
//! into Web-Mercator pixel grids and hourly buckets, and only ever releases
//! averages backed by enough reports to hide any single device.
//!
//! * [`model`]: measurements, sites, metrics, hourly buckets
//! * [`projection`]: latitude/longitude to world pixels, grid cells
//! * [`aggregate`]: heatmaps, hourly series, site summaries
//! * [`store`]: append-only storage with immutable snapshots
//! * [`dataset`]: the newline-delimited JSON record format
//! * [`sim`]: the seeded mock dataset generator
//! * [`oracle`]: brute-force reference aggregation for cross-checking
//!
//! The guide in `book/` walks through each of these with runnable examples.

pub mod aggregate;
pub mod dataset;
pub mod model;
pub mod oracle;
pub mod projection;
pub mod sim;
pub mod store;

pub use aggregate::{HeatmapCell, PrivacyPolicy, SeriesPoint, SiteSeries, SiteSummary, Windows};
pub use model::{validate_measurement, Measurement, MetricKind, Site, SiteStatus, TimeBucket};
pub use projection::{cell_of, project, unproject, CellIndex, GridSpec, PixelPoint};
pub use store::{MeasurementStore, QueryFilter, Snapshot};

// The guide's code blocks are compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/projection.md")]
    struct Projection;
    #[doc = include_str!("../../../book/src/heatmap.md")]
    struct Heatmap;
    #[doc = include_str!("../../../book/src/timeseries.md")]
    struct Timeseries;
    #[doc = include_str!("../../../book/src/storage.md")]
    struct Storage;
    #[doc = include_str!("../../../book/src/simulator.md")]
    struct Simulator;
    #[doc = include_str!("../../../book/src/dataset.md")]
    struct Dataset;
}
