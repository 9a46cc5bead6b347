//! Spherical geometry on a mean-radius earth.
//!
//! Locations are averaged in 3D Cartesian space and projected back onto the
//! sphere; averaging raw latitude/longitude breaks down near the poles and
//! across the antimeridian.

use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IUGG mean earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Half the circumference of the sphere; the largest possible geodesic distance.
pub const MAX_GEODESIC_KM: f64 = std::f64::consts::PI * EARTH_RADIUS_KM;

/// Mean vectors shorter than this (relative to total weight) have no direction.
const DEGENERATE_NORM: f64 = 1e-12;

/// A latitude/longitude position in degrees.
///
/// Latitude lies in `[-90, 90]`, longitude in `[-180, 180)`; `+180` is folded
/// onto `-180`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lng: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lng: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lng)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        if !lat.is_finite() || !lng.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "non-finite ({lat}, {lng})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !(-180.0..=180.0).contains(&lng) {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {lng} outside [-180, 180]"
            )));
        }
        Ok(Self {
            lat,
            lng: normalize_lng(lng),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }

    pub fn to_cartesian(&self) -> UnitVec3 {
        to_cartesian(*self)
    }
}

/// Fold any finite longitude into `[-180, 180)`.
fn normalize_lng(lng: f64) -> f64 {
    let folded = (lng + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if folded >= 180.0 {
        -180.0
    } else {
        folded
    }
}

/// A plain 3-vector, used for location sums that are not unit length.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Add for Vec3 {
    type Output = Vec3;

    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;

    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// A point on the unit sphere in Earth-centered Cartesian coordinates.
///
/// `(1, 0, 0)` is the equator at the prime meridian, `(0, 0, 1)` the north pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Normalize a nonzero vector onto the sphere.
    pub fn try_normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate("cannot normalize the zero vector".into()));
        }
        Ok(Self(v * (1.0 / n)))
    }

    pub fn as_vec(&self) -> Vec3 {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }
}

pub fn to_cartesian(p: GeoPoint) -> UnitVec3 {
    let (lat, lng) = (p.lat.to_radians(), p.lng.to_radians());
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lng, cos_lng) = lng.sin_cos();
    UnitVec3(Vec3::new(cos_lat * cos_lng, cos_lat * sin_lng, sin_lat))
}

/// Project a nonzero vector back to latitude/longitude. The vector need not be
/// unit length.
pub fn from_cartesian(v: Vec3) -> Result<GeoPoint> {
    let u = UnitVec3::try_normalize(v)?.0;
    let lat = u.z.atan2(u.x.hypot(u.y)).to_degrees();
    let lng = u.y.atan2(u.x).to_degrees();
    GeoPoint::new(lat.clamp(-90.0, 90.0), lng)
}

/// Great-circle (haversine) distance in kilometers.
pub fn geodesic_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlng = (b.lng - a.lng).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Direction of a Cartesian location sum as a point, rejecting sums whose
/// length is negligible next to `total_weight`.
pub fn mean_direction(sum: Vec3, total_weight: f64) -> Result<GeoPoint> {
    if total_weight.is_nan() || total_weight <= 0.0 {
        return Err(Error::Degenerate("total weight must be positive".into()));
    }
    if sum.norm() <= DEGENERATE_NORM * total_weight {
        return Err(Error::Degenerate(
            "mean vector vanishes (antipodal mass); centroid undefined".into(),
        ));
    }
    from_cartesian(sum)
}

/// Weighted spherical centroid: the weighted mean of the Cartesian embeddings,
/// renormalized onto the sphere.
pub fn weighted_centroid(points: &[(GeoPoint, f64)]) -> Result<GeoPoint> {
    let mut sum = Vec3::ZERO;
    let mut total = 0.0;
    for &(p, w) in points {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Degenerate(format!("invalid weight {w}")));
        }
        sum += p.to_cartesian().as_vec() * w;
        total += w;
    }
    if total == 0.0 {
        return Err(Error::Degenerate("no positive weight".into()));
    }
    mean_direction(sum, total)
}
