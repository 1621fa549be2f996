//! Planar and geodetic coordinate types, local-frame conversion, and error metrics.
//!
//! All planar quantities use an east-north axis convention: `x` grows east,
//! `y` grows north, both in meters. Geodetic coordinates are converted into
//! that frame with an equirectangular tangent-plane projection, which is
//! accurate to well under a meter over the tens-of-kilometers spans this
//! crate deals with.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Equatorial Earth radius in meters (WGS-84 semi-major axis).
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} out of range [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} out of range [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("coordinate component is not finite")]
    NotFinite,
    #[error("local frame origin latitude {0} too close to a pole")]
    PolarOrigin(f64),
}

/// Planar position in meters, east-north convention.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance to another position.
    pub fn distance(&self, other: &Position2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

impl std::ops::Add for Position2 {
    type Output = Position2;
    fn add(self, rhs: Position2) -> Position2 {
        Position2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Position2 {
    type Output = Position2;
    fn sub(self, rhs: Position2) -> Position2 {
        Position2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Planar velocity in meters per second, east-north convention.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity2 {
    pub vx: f64,
    pub vy: f64,
}

impl Velocity2 {
    pub fn new(vx: f64, vy: f64) -> Self {
        Self { vx, vy }
    }

    /// Displacement accumulated over `dt` seconds.
    pub fn displacement(&self, dt: f64) -> Position2 {
        Position2::new(self.vx * dt, self.vy * dt)
    }
}

/// Localization error: the L2 norm between two planar positions.
pub fn position_error(a: Position2, b: Position2) -> f64 {
    a.distance(&b)
}

/// Geodetic latitude/longitude in degrees. Construction validates range
/// bounds, so a value of this type is always a usable coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoCoordinate", into = "RawGeoCoordinate")]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoCoordinate> for GeoCoordinate {
    type Error = GeoError;
    fn try_from(raw: RawGeoCoordinate) -> Result<Self, GeoError> {
        GeoCoordinate::new(raw.lat, raw.lon)
    }
}

impl From<GeoCoordinate> for RawGeoCoordinate {
    fn from(g: GeoCoordinate) -> Self {
        RawGeoCoordinate { lat: g.lat, lon: g.lon }
    }
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NotFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// A local tangent plane anchored at a geodetic origin.
///
/// The projection is equirectangular: `x = R cos(lat0) Δlon`,
/// `y = R Δlat` (angles in radians). `geo_to_local` and `local_to_geo`
/// are exact inverses of each other under this formula. The origin must
/// sit strictly between the poles so the longitude scale is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    origin: GeoCoordinate,
}

impl LocalFrame {
    pub fn new(origin: GeoCoordinate) -> Result<Self, GeoError> {
        if origin.lat().abs() >= 90.0 {
            return Err(GeoError::PolarOrigin(origin.lat()));
        }
        Ok(Self { origin })
    }

    pub fn origin(&self) -> GeoCoordinate {
        self.origin
    }

    pub fn geo_to_local(&self, g: GeoCoordinate) -> Position2 {
        let dlat = (g.lat() - self.origin.lat()).to_radians();
        let dlon = (g.lon() - self.origin.lon()).to_radians();
        Position2::new(
            EARTH_RADIUS_M * self.origin.lat().to_radians().cos() * dlon,
            EARTH_RADIUS_M * dlat,
        )
    }

    /// Inverse of [`geo_to_local`](Self::geo_to_local). Valid for positions
    /// that map back inside the latitude/longitude bounds; trajectories in
    /// this crate span a few tens of kilometers, far from those limits.
    pub fn local_to_geo(&self, p: Position2) -> GeoCoordinate {
        let lat = self.origin.lat() + (p.y / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin.lon()
            + (p.x / (EARTH_RADIUS_M * self.origin.lat().to_radians().cos())).to_degrees();
        debug_assert!((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon));
        GeoCoordinate { lat, lon }
    }
}

/// A timestamped planar pose. Trajectories are strictly increasing in `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub position: Position2,
}
