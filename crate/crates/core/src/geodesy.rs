//! WGS84 geodesy: geodetic ↔ ECEF conversion and a local East-North-Up frame.
//!
//! Angles cross the API in degrees and are converted to radians once on
//! entry. Everything is `f64`; single precision loses whole meters at ECEF
//! magnitudes.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// WGS84 ellipsoid parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wgs84 {
    /// Equatorial radius in meters.
    pub a: f64,
    /// First eccentricity squared.
    pub e2: f64,
}

pub const WGS84: Wgs84 = Wgs84 {
    a: 6_378_137.0,
    e2: 6.694_379_99e-3,
};

impl Wgs84 {
    /// Semi-minor (polar) axis, `a·sqrt(1 − e²)`.
    pub fn b(&self) -> f64 {
        self.a * (1.0 - self.e2).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesyError {
    #[error("latitude {0}° outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Geodetic position on the WGS84 ellipsoid. Height is treated as ellipsoidal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPosition {
    latitude_deg: f64,
    longitude_deg: f64,
    altitude_m: f64,
}

impl GeodeticPosition {
    /// Validates latitude and normalizes longitude into (−180, 180].
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Result<Self, GeodesyError> {
        if !(latitude_deg.is_finite() && longitude_deg.is_finite() && altitude_m.is_finite()) {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeodesyError::LatitudeOutOfRange(latitude_deg));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg: normalize_longitude(longitude_deg),
            altitude_m,
        })
    }

    pub fn latitude_deg(&self) -> f64 {
        self.latitude_deg
    }

    pub fn longitude_deg(&self) -> f64 {
        self.longitude_deg
    }

    pub fn altitude_m(&self) -> f64 {
        self.altitude_m
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped == -180.0 {
        180.0
    } else {
        wrapped
    }
}

/// Earth-centered, Earth-fixed Cartesian position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcefPosition {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl EcefPosition {
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            x_m: v.x,
            y_m: v.y,
            z_m: v.z,
        }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x_m, self.y_m, self.z_m)
    }
}

/// Position relative to a geodetic origin in its local tangent plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnuPosition {
    pub east_m: f64,
    pub north_m: f64,
    pub up_m: f64,
}

impl EnuPosition {
    pub fn new(east_m: f64, north_m: f64, up_m: f64) -> Self {
        Self { east_m, north_m, up_m }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.east_m, self.north_m, self.up_m)
    }

    pub fn horizontal_distance(&self, other: &EnuPosition) -> f64 {
        (self.east_m - other.east_m).hypot(self.north_m - other.north_m)
    }
}

/// Prime vertical radius of curvature `N(φ) = a / sqrt(1 − e² sin²φ)`.
pub fn prime_vertical_radius(latitude_deg: f64) -> Result<f64, GeodesyError> {
    if !latitude_deg.is_finite() {
        return Err(GeodesyError::NonFinite);
    }
    if !(-90.0..=90.0).contains(&latitude_deg) {
        return Err(GeodesyError::LatitudeOutOfRange(latitude_deg));
    }
    Ok(prime_vertical_radius_rad(latitude_deg.to_radians()))
}

fn prime_vertical_radius_rad(lat: f64) -> f64 {
    let s = lat.sin();
    WGS84.a / (1.0 - WGS84.e2 * s * s).sqrt()
}

pub fn geodetic_to_ecef(p: &GeodeticPosition) -> EcefPosition {
    let lat = p.latitude_deg.to_radians();
    let lon = p.longitude_deg.to_radians();
    let h = p.altitude_m;
    let n = prime_vertical_radius_rad(lat);
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    EcefPosition {
        x_m: (n + h) * cos_lat * cos_lon,
        y_m: (n + h) * cos_lat * sin_lon,
        z_m: ((1.0 - WGS84.e2) * n + h) * sin_lat,
    }
}

/// Iterative inverse of [`geodetic_to_ecef`]. Used by the simulator to turn
/// local trajectories back into NMEA coordinates.
pub fn ecef_to_geodetic(p: &EcefPosition) -> GeodeticPosition {
    let Wgs84 { a, e2 } = WGS84;
    let rho = p.x_m.hypot(p.y_m);
    let lon = p.y_m.atan2(p.x_m);
    let mut lat = p.z_m.atan2(rho * (1.0 - e2));
    for _ in 0..8 {
        let n = prime_vertical_radius_rad(lat);
        let next = (p.z_m + e2 * n * lat.sin()).atan2(rho);
        if (next - lat).abs() < 1e-15 {
            lat = next;
            break;
        }
        lat = next;
    }
    let (sin_lat, cos_lat) = lat.sin_cos();
    let h = rho * cos_lat + p.z_m * sin_lat - a * (1.0 - e2 * sin_lat * sin_lat).sqrt();
    GeodeticPosition {
        latitude_deg: lat.to_degrees().clamp(-90.0, 90.0),
        longitude_deg: normalize_longitude(lon.to_degrees()),
        altitude_m: h,
    }
}

/// Local tangent frame anchored at a geodetic origin. Caches the origin's
/// ECEF position and the ECEF→ENU rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    origin: GeodeticPosition,
    origin_ecef: Vector3<f64>,
    // rows are the east, north, up unit vectors in ECEF
    ecef_to_enu: Matrix3<f64>,
}

impl LocalFrame {
    pub fn new(origin: GeodeticPosition) -> Self {
        let lat = origin.latitude_deg.to_radians();
        let lon = origin.longitude_deg.to_radians();
        let (sl, cl) = lat.sin_cos();
        let (so, co) = lon.sin_cos();
        #[rustfmt::skip]
        let ecef_to_enu = Matrix3::new(
            -so,       co,      0.0,
            -sl * co, -sl * so, cl,
             cl * co,  cl * so, sl,
        );
        Self {
            origin,
            origin_ecef: geodetic_to_ecef(&origin).to_vector(),
            ecef_to_enu,
        }
    }

    pub fn origin(&self) -> &GeodeticPosition {
        &self.origin
    }

    pub fn to_enu(&self, p: &EcefPosition) -> EnuPosition {
        EnuPosition::from_vector(&(self.ecef_to_enu * (p.to_vector() - self.origin_ecef)))
    }

    pub fn to_ecef(&self, p: &EnuPosition) -> EcefPosition {
        EcefPosition::from_vector(&(self.ecef_to_enu.transpose() * p.to_vector() + self.origin_ecef))
    }

    /// Rotates a free vector (velocity, displacement) from ENU into ECEF axes.
    pub fn rotate_to_ecef(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu.transpose() * v
    }

    pub fn rotate_to_enu(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu * v
    }

    pub fn enu_to_geodetic(&self, p: &EnuPosition) -> GeodeticPosition {
        ecef_to_geodetic(&self.to_ecef(p))
    }
}

pub fn ecef_to_enu(p: &EcefPosition, origin: &GeodeticPosition) -> EnuPosition {
    LocalFrame::new(*origin).to_enu(p)
}

pub fn enu_to_ecef(p: &EnuPosition, origin: &GeodeticPosition) -> EcefPosition {
    LocalFrame::new(*origin).to_ecef(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geo(lat: f64, lon: f64, h: f64) -> GeodeticPosition {
        GeodeticPosition::new(lat, lon, h).unwrap()
    }

    #[test]
    fn prime_vertical_radius_reference_values() {
        assert_eq!(prime_vertical_radius(0.0).unwrap(), 6_378_137.0);
        // 50-digit mpmath evaluations
        assert_abs_diff_eq!(prime_vertical_radius(90.0).unwrap(), 6_399_593.625_758_037_8, epsilon = 1e-6);
        assert_abs_diff_eq!(prime_vertical_radius(45.0).unwrap(), 6_388_838.290_120_921_5, epsilon = 1e-6);
    }

    #[test]
    fn prime_vertical_radius_rejects_bad_latitude() {
        assert_eq!(
            prime_vertical_radius(90.5),
            Err(GeodesyError::LatitudeOutOfRange(90.5))
        );
        assert!(prime_vertical_radius(f64::NAN).is_err());
    }

    #[test]
    fn ecef_reference_points() {
        let e = geodetic_to_ecef(&geo(0.0, 0.0, 0.0));
        assert_eq!((e.x_m, e.y_m, e.z_m), (6_378_137.0, 0.0, 0.0));

        let pole = geodetic_to_ecef(&geo(90.0, 0.0, 0.0));
        assert_abs_diff_eq!(pole.x_m, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(pole.z_m, 6_356_752.314_245_631_7, epsilon = 1e-6);
        assert_abs_diff_eq!(pole.z_m, WGS84.b(), epsilon = 1e-6);

        let p = geodetic_to_ecef(&geo(45.0, 90.0, 100.0));
        assert_abs_diff_eq!(p.x_m, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.y_m, 4_517_661.589_526_889_5, epsilon = 1e-6);
        assert_abs_diff_eq!(p.z_m, 4_487_419.119_544_517_8, epsilon = 1e-6);
    }

    #[test]
    fn longitude_is_normalized() {
        assert_eq!(geo(0.0, 190.0, 0.0).longitude_deg(), -170.0);
        assert_eq!(geo(0.0, -180.0, 0.0).longitude_deg(), 180.0);
        assert_eq!(geo(0.0, 540.0, 0.0).longitude_deg(), 180.0);
        assert_eq!(geo(0.0, 180.0, 0.0).longitude_deg(), 180.0);
    }

    #[test]
    fn enu_reference_cases() {
        let origin = geo(12.0, -33.0, 250.0);
        let self_enu = ecef_to_enu(&geodetic_to_ecef(&origin), &origin);
        assert_abs_diff_eq!(self_enu.to_vector().norm(), 0.0, epsilon = 1e-9);

        let o = geo(0.0, 0.0, 0.0);
        let up = ecef_to_enu(&geodetic_to_ecef(&geo(0.0, 0.0, 100.0)), &o);
        assert_abs_diff_eq!(up.east_m, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(up.north_m, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(up.up_m, 100.0, epsilon = 1e-9);

        // meridian arc length 45° → 45.0001°, mpmath quadrature
        let o = geo(45.0, 10.0, 0.0);
        let n = ecef_to_enu(&geodetic_to_ecef(&geo(45.0001, 10.0, 0.0)), &o);
        assert_abs_diff_eq!(n.north_m, 11.113_177_839_128_94, epsilon = 0.01);
        assert_abs_diff_eq!(n.east_m, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn inverse_recovers_geodetic() {
        for &(lat, lon, h) in &[(0.0, 0.0, 0.0), (45.0, 10.0, 100.0), (-89.9, 179.0, -50.0), (90.0, 0.0, 10.0)] {
            let back = ecef_to_geodetic(&geodetic_to_ecef(&geo(lat, lon, h)));
            assert_abs_diff_eq!(back.latitude_deg(), lat, epsilon = 1e-10);
            assert_abs_diff_eq!(back.altitude_m(), h, epsilon = 1e-6);
            if lat.abs() < 90.0 {
                assert_abs_diff_eq!(back.longitude_deg(), lon, epsilon = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn surface_identity(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
            let e = geodetic_to_ecef(&geo(lat, lon, 0.0));
            let a2 = WGS84.a * WGS84.a;
            let lhs = (e.x_m * e.x_m + e.y_m * e.y_m) / a2 + e.z_m * e.z_m / (a2 * (1.0 - WGS84.e2));
            prop_assert!((lhs - 1.0).abs() < 1e-9);
        }

        #[test]
        fn longitude_rotation(lat in -89.0f64..89.0, lon in -170.0f64..170.0, d in -10.0f64..10.0, h in -100.0f64..10_000.0) {
            let base = geodetic_to_ecef(&geo(lat, lon, h));
            let shifted = geodetic_to_ecef(&geo(lat, lon + d, h));
            let (s, c) = d.to_radians().sin_cos();
            prop_assert!((c * base.x_m - s * base.y_m - shifted.x_m).abs() < 1e-6);
            prop_assert!((s * base.x_m + c * base.y_m - shifted.y_m).abs() < 1e-6);
            prop_assert!((base.z_m - shifted.z_m).abs() < 1e-6);
        }

        #[test]
        fn hemisphere_symmetry(lat in 0.0f64..=90.0, lon in -180.0f64..=180.0, h in -100.0f64..10_000.0) {
            let north = geodetic_to_ecef(&geo(lat, lon, h));
            let south = geodetic_to_ecef(&geo(-lat, lon, h));
            prop_assert!((north.x_m - south.x_m).abs() < 1e-9);
            prop_assert!((north.y_m - south.y_m).abs() < 1e-9);
            prop_assert!((north.z_m + south.z_m).abs() < 1e-9);
        }

        #[test]
        fn enu_round_trip(lat in -85.0f64..85.0, lon in -180.0f64..180.0,
                          e in -10_000.0f64..10_000.0, n in -10_000.0f64..10_000.0, u in -500.0f64..500.0) {
            let frame = LocalFrame::new(geo(lat, lon, 0.0));
            let enu = EnuPosition::new(e, n, u);
            let back = frame.to_enu(&frame.to_ecef(&enu));
            prop_assert!((back.to_vector() - enu.to_vector()).norm() < 1e-9);
        }
    }
}
