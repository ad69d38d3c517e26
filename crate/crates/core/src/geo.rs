//! Geodesic and geometric primitives relating base-station and UAV positions.
//!
//! Positions are carried as latitude/longitude/altitude triples so GPS logs
//! can be used directly. Horizontal separation uses the great-circle arccos
//! form on a sphere of radius [`EARTH_RADIUS_M`]; altitudes are treated as
//! heights above a common flat ground plane, which also carries the image
//! construction for the ground-reflected ray.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth radius used for great-circle distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Separations below this (in meters, both axes) count as co-located.
const COLOCATION_EPS_M: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} deg outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} deg outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("altitude {0} m must be finite and non-negative")]
    InvalidAltitude(f64),
    #[error("locations are co-located (separation below 1e-9 m)")]
    CoLocated,
}

/// A GPS-style position: geodetic coordinates plus altitude above the common
/// reference plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GeoLocation {
    /// Validated constructor: lat in [-90, 90], lon in [-180, 180], altitude
    /// finite and >= 0.
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::InvalidLatitude(lat_deg));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeoError::InvalidLongitude(lon_deg));
        }
        if !alt_m.is_finite() || alt_m < 0.0 {
            return Err(GeoError::InvalidAltitude(alt_m));
        }
        Ok(Self { lat_deg, lon_deg, alt_m })
    }

    /// Same position at a different altitude.
    pub fn at_altitude(&self, alt_m: f64) -> Self {
        Self { alt_m, ..*self }
    }
}

/// Distances and angles of one BS-UAV link, including the ground-reflection
/// geometry from the flat-earth image construction.
///
/// Invariants: `d_3d^2 = d_h^2 + d_v^2` and `reflected_path_len >= d_3d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    /// Horizontal great-circle distance, meters.
    pub d_h: f64,
    /// Vertical separation |h_bs - h_uav|, meters.
    pub d_v: f64,
    /// Slant (3D) distance, meters.
    pub d_3d: f64,
    /// Elevation angle of the direct ray above horizontal, radians.
    pub theta_l: f64,
    /// Ground-reflection angle, radians.
    pub theta_r: f64,
    /// Length of the reflected path r1 + r2, meters.
    pub reflected_path_len: f64,
}

impl LinkGeometry {
    /// Phase lag of the ground-reflected ray relative to the direct ray,
    /// `2*pi*(r1 + r2 - d_3d) / lambda`, radians. Always >= 0.
    pub fn phase_difference(&self, wavelength_m: f64) -> f64 {
        2.0 * std::f64::consts::PI * (self.reflected_path_len - self.d_3d) / wavelength_m
    }
}

/// Great-circle distance between two positions, ignoring altitude.
///
/// Evaluates the spherical arccos form, with its argument clamped to [-1, 1]
/// against floating-point overshoot. Below ~90 km of separation the arccos
/// loses precision (its argument sits within rounding error of 1, which
/// shows up as tens of centimeters of phantom distance at coincident
/// points), so the same great-circle angle is evaluated through the
/// haversine identity there. Symmetric, non-negative, and exactly 0 for
/// identical coordinates.
pub fn horizontal_distance(a: &GeoLocation, b: &GeoLocation) -> f64 {
    let (pa, pb) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let cos_angle = (pa.sin() * pb.sin() + pa.cos() * pb.cos() * dlon.cos()).clamp(-1.0, 1.0);
    if cos_angle < 0.9999 {
        return cos_angle.acos() * EARTH_RADIUS_M;
    }
    let sin_half_lat = ((pb - pa) / 2.0).sin();
    let sin_half_lon = (dlon / 2.0).sin();
    let h = sin_half_lat * sin_half_lat + pa.cos() * pb.cos() * sin_half_lon * sin_half_lon;
    2.0 * h.sqrt().clamp(-1.0, 1.0).asin() * EARTH_RADIUS_M
}

/// Full 3D separation between two positions, meters.
pub fn distance_3d(a: &GeoLocation, b: &GeoLocation) -> f64 {
    horizontal_distance(a, b).hypot(a.alt_m - b.alt_m)
}

/// Initial great-circle bearing from `from` to `to`, degrees clockwise from
/// north in [0, 360).
pub fn bearing_deg(from: &GeoLocation, to: &GeoLocation) -> f64 {
    let (p1, p2) = (from.lat_deg.to_radians(), to.lat_deg.to_radians());
    let dlon = (to.lon_deg - from.lon_deg).to_radians();
    let y = dlon.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Computes the BS-UAV link geometry.
///
/// `theta_l = atan(d_v / d_h)`, `theta_r = atan((h_bs + h_uav) / d_h)`, and
/// the reflected path length comes from the flat-earth image method:
/// `r1 + r2 = sqrt(d_h^2 + (h_bs + h_uav)^2)`.
pub fn link_geometry(bs: &GeoLocation, uav: &GeoLocation) -> Result<LinkGeometry, GeoError> {
    let d_h = horizontal_distance(bs, uav);
    let d_v = (bs.alt_m - uav.alt_m).abs();
    if d_h < COLOCATION_EPS_M && d_v < COLOCATION_EPS_M {
        return Err(GeoError::CoLocated);
    }
    let height_sum = bs.alt_m + uav.alt_m;
    Ok(LinkGeometry {
        d_h,
        d_v,
        d_3d: d_h.hypot(d_v),
        theta_l: d_v.atan2(d_h),
        theta_r: height_sum.atan2(d_h),
        reflected_path_len: d_h.hypot(height_sum),
    })
}
