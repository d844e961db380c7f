//! Geographic primitives: validated coordinates, haversine distance and a
//! local equirectangular projection used for clustering in meter space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest offset (degrees, per axis) accepted by [`project_local`].
pub const PROJECTION_WINDOW_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatLon", into = "RawLatLon")]
pub struct LatLon {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLatLon {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawLatLon> for LatLon {
    type Error = Error;

    fn try_from(raw: RawLatLon) -> Result<Self> {
        LatLon::new(raw.lat, raw.lon)
    }
}

impl From<LatLon> for RawLatLon {
    fn from(p: LatLon) -> Self {
        RawLatLon { lat: p.lat, lon: p.lon }
    }
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate(format!("({lat}, {lon}) is not finite")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoordinate(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(LatLon { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Position in meters relative to a projection origin (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn distance_squared(&self, other: &PlanarPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        self.distance_squared(other).sqrt()
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.clamp(0.0, 1.0).sqrt().asin()
}

/// Equirectangular projection of `p` around `origin`.
///
/// Only valid at city scale: both coordinate offsets must be below
/// [`PROJECTION_WINDOW_DEG`].
pub fn project_local(p: LatLon, origin: LatLon) -> Result<PlanarPoint> {
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    if dlat.abs() >= PROJECTION_WINDOW_DEG || dlon.abs() >= PROJECTION_WINDOW_DEG {
        return Err(Error::OutsideProjectionWindow { lat: p.lat, lon: p.lon });
    }
    Ok(PlanarPoint {
        x: EARTH_RADIUS_M * dlon.to_radians() * origin.lat.to_radians().cos(),
        y: EARTH_RADIUS_M * dlat.to_radians(),
    })
}

/// Inverse of [`project_local`].
pub fn unproject_local(p: PlanarPoint, origin: LatLon) -> Result<LatLon> {
    let lat = origin.lat + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (p.x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    LatLon::new(lat, lon)
}

/// Arithmetic mean of latitudes and longitudes. Fine for points that do not
/// straddle the antimeridian.
pub fn centroid(points: &[LatLon]) -> Result<LatLon> {
    if points.is_empty() {
        return Err(Error::Empty("point list"));
    }
    let n = points.len() as f64;
    let lat = points.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon = points.iter().map(|p| p.lon).sum::<f64>() / n;
    LatLon::new(lat, lon)
}
