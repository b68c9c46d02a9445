//! Planar positions in a local metric projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Position in meters east (`x`) and north (`y`) of the projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Squared Euclidean distance; avoids the square root inside kernels.
pub fn distance_sq(a: Position, b: Position) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

/// Axis-aligned rectangle in projected meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let b = Self {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        if ![min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite())
            || min_x >= max_x
            || min_y >= max_y
        {
            return Err(Error::InvalidInput(format!("degenerate bounding box {b:?}")));
        }
        Ok(b)
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Checks that `p` is finite and inside the box.
    pub fn validate(&self, p: Position) -> Result<Position> {
        if p.is_finite() && self.contains(p) {
            Ok(p)
        } else {
            Err(Error::InvalidInput(format!(
                "position ({}, {}) outside study area",
                p.x, p.y
            )))
        }
    }
}

/// Equirectangular projection around a fixed origin.
///
/// At city scale (tens of kilometers) the distortion stays well below 0.1%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Projection {
    pub fn new(origin_lon: f64, origin_lat: f64) -> Result<Self> {
        check_lon_lat(origin_lon, origin_lat)?;
        Ok(Self {
            origin_lon,
            origin_lat,
        })
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<Position> {
        check_lon_lat(lon, lat)?;
        let cos0 = self.origin_lat.to_radians().cos();
        Ok(Position {
            x: EARTH_RADIUS_M * (lon - self.origin_lon).to_radians() * cos0,
            y: EARTH_RADIUS_M * (lat - self.origin_lat).to_radians(),
        })
    }

    /// Inverse of [`Projection::project`]; returns `(lon, lat)` in degrees.
    pub fn unproject(&self, p: Position) -> (f64, f64) {
        let cos0 = self.origin_lat.to_radians().cos();
        let lon = self.origin_lon + (p.x / (EARTH_RADIUS_M * cos0)).to_degrees();
        let lat = self.origin_lat + (p.y / EARTH_RADIUS_M).to_degrees();
        (lon, lat)
    }
}

fn check_lon_lat(lon: f64, lat: f64) -> Result<()> {
    if !lon.is_finite() || !lat.is_finite() || lat.abs() >= 89.0 || lon.abs() > 180.0 {
        return Err(Error::InvalidInput(format!(
            "coordinates out of range: lon {lon}, lat {lat}"
        )));
    }
    Ok(())
}
