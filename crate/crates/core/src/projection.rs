//! Web-Mercator projection from latitude/longitude to world pixels, and the
//! pixel grid used to bin measurements into heatmap cells.
//!
//! World pixel space at zoom `z` is a square of `256 · 2^z` pixels with the
//! origin at the north-west corner (latitude 85.0511°, longitude -180°),
//! matching the slippy-map tile layers the dashboard draws on.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub const TILE_SIZE: f64 = 256.0;

/// Latitude at which the Mercator square closes: `atan(sinh(π))` in degrees.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;

/// Highest supported zoom level.
pub const MAX_ZOOM: u8 = 30;

/// Equatorial circumference of the WGS84 ellipsoid used by Web Mercator, in meters.
pub const EARTH_CIRCUMFERENCE_M: f64 = 2.0 * PI * 6_378_137.0;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("latitude {0} is outside the Mercator domain (|lat| <= {MAX_LATITUDE})")]
    LatitudeOutOfProjectionDomain(f64),
    #[error("longitude {0} is outside [-180, 180]")]
    LongitudeOutOfRange(f64),
}

/// Width (and height) of the world in pixels at `zoom`.
pub fn world_size(zoom: u8) -> f64 {
    TILE_SIZE * f64::from(1u32 << zoom.min(MAX_ZOOM))
}

/// A position in zoom-independent Mercator space, both axes in `[0, 1]`.
///
/// Scaling by [`world_size`] is a multiplication by a power of two, so
/// `unit.at_zoom(z)` is bit-identical to [`project`] at every zoom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPoint {
    pub x: f64,
    pub y: f64,
}

impl UnitPoint {
    pub fn at_zoom(self, zoom: u8) -> PixelPoint {
        let w = world_size(zoom);
        PixelPoint {
            x: self.x * w,
            y: self.y * w,
        }
    }
}

/// World-pixel coordinates at some zoom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

/// Normalized Mercator coordinates of a location.
pub fn unit_point(latitude: f64, longitude: f64) -> Result<UnitPoint, ProjectionError> {
    // NaN fails both range checks.
    if !(latitude.abs() <= MAX_LATITUDE) {
        return Err(ProjectionError::LatitudeOutOfProjectionDomain(latitude));
    }
    if !(longitude.abs() <= 180.0) {
        return Err(ProjectionError::LongitudeOutOfRange(longitude));
    }
    let phi = latitude.to_radians();
    // ln(tan φ + sec φ) == asinh(tan φ)
    let y = (1.0 - phi.tan().asinh() / PI) / 2.0;
    Ok(UnitPoint {
        x: (longitude + 180.0) / 360.0,
        y: y.clamp(0.0, 1.0),
    })
}

/// Projects a location to world pixels at `zoom`.
pub fn project(latitude: f64, longitude: f64, zoom: u8) -> Result<PixelPoint, ProjectionError> {
    Ok(unit_point(latitude, longitude)?.at_zoom(zoom))
}

/// Inverse of [`project`]: returns `(latitude, longitude)` in degrees.
pub fn unproject(p: PixelPoint, zoom: u8) -> (f64, f64) {
    let w = world_size(zoom);
    let longitude = p.x / w * 360.0 - 180.0;
    let latitude = (PI * (1.0 - 2.0 * p.y / w)).sinh().atan().to_degrees();
    (latitude, longitude)
}

/// Ground meters covered by one pixel at `latitude` and `zoom`.
pub fn meters_per_pixel(latitude: f64, zoom: u8) -> f64 {
    EARTH_CIRCUMFERENCE_M * latitude.to_radians().cos() / world_size(zoom)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("zoom {0} exceeds the maximum of {MAX_ZOOM}")]
    ZoomTooLarge(u8),
    #[error("viewport origin must be finite and non-negative")]
    BadOrigin,
    #[error("viewport width, height and cell size must be positive")]
    EmptyExtent,
    #[error("viewport extends past the world edge ({0} px)")]
    OutsideWorld(f64),
}

/// The projection parameters and grid size of one heatmap request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub zoom: u8,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub cell_px: u32,
}

/// Column `i` and row `j` of a grid cell, counted from the viewport's
/// top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: u32,
    pub j: u32,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.zoom > MAX_ZOOM {
            return Err(GridError::ZoomTooLarge(self.zoom));
        }
        let origin_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !origin_ok(self.origin_x) || !origin_ok(self.origin_y) {
            return Err(GridError::BadOrigin);
        }
        if self.width_px == 0 || self.height_px == 0 || self.cell_px == 0 {
            return Err(GridError::EmptyExtent);
        }
        let w = world_size(self.zoom);
        if self.origin_x + f64::from(self.width_px) > w
            || self.origin_y + f64::from(self.height_px) > w
        {
            return Err(GridError::OutsideWorld(w));
        }
        Ok(())
    }

    pub fn columns(&self) -> u32 {
        self.width_px.div_ceil(self.cell_px)
    }

    pub fn rows(&self) -> u32 {
        self.height_px.div_ceil(self.cell_px)
    }

    /// Ground length of a cell edge at the viewport latitude farthest from
    /// the equator, i.e. the smallest cell anywhere in the viewport.
    pub fn min_cell_meters(&self) -> f64 {
        let top = unproject(PixelPoint { x: 0.0, y: self.origin_y }, self.zoom).0;
        let bottom = unproject(
            PixelPoint {
                x: 0.0,
                y: self.origin_y + f64::from(self.height_px),
            },
            self.zoom,
        )
        .0;
        let lat = top.abs().max(bottom.abs());
        f64::from(self.cell_px) * meters_per_pixel(lat, self.zoom)
    }

    /// North-west and south-east corners `(lat, lon)` of a cell, clipped to
    /// the viewport.
    pub fn cell_bounds(&self, c: CellIndex) -> ((f64, f64), (f64, f64)) {
        let cell = f64::from(self.cell_px);
        let x0 = self.origin_x + f64::from(c.i) * cell;
        let y0 = self.origin_y + f64::from(c.j) * cell;
        let x1 = (x0 + cell).min(self.origin_x + f64::from(self.width_px));
        let y1 = (y0 + cell).min(self.origin_y + f64::from(self.height_px));
        (
            unproject(PixelPoint { x: x0, y: y0 }, self.zoom),
            unproject(PixelPoint { x: x1, y: y1 }, self.zoom),
        )
    }
}

/// Assigns a pixel to its grid cell, or `None` when it lies outside the
/// viewport. Boxes are half-open: `[k·cell, (k+1)·cell)`.
pub fn cell_of(p: PixelPoint, g: &GridSpec) -> Option<CellIndex> {
    let dx = p.x - g.origin_x;
    let dy = p.y - g.origin_y;
    if !(dx >= 0.0 && dx < f64::from(g.width_px) && dy >= 0.0 && dy < f64::from(g.height_px)) {
        return None;
    }
    let cell = f64::from(g.cell_px);
    // Division may round up onto the far edge when the extent is a whole
    // number of cells.
    let i = ((dx / cell).floor() as u32).min(g.columns() - 1);
    let j = ((dy / cell).floor() as u32).min(g.rows() - 1);
    Some(CellIndex { i, j })
}
