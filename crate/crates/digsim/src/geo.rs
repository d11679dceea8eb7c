//! WGS-84 geodetic / ECEF / local-ENU coordinate conversions.
//!
//! Recorded GPS trajectories arrive as latitude-longitude-altitude fixes;
//! the trajectory metrics operate in a local East-North-Up frame anchored at
//! a reference point. The chain here is geodetic -> ECEF -> ENU with the
//! exact inverse for round-trip work.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use thiserror::Error;

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening (1 / 298.257223563).
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// WGS-84 semi-minor axis, meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const LATITUDE_TOL_RAD: f64 = 1e-12;
const MAX_LATITUDE_ITERS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    LatitudeOutOfRange(f64),
    #[error("non-finite coordinate component")]
    NonFinite,
    #[error("geodetic latitude recovery did not converge within {0} iterations")]
    LatitudeDidNotConverge(usize),
}

/// Geodetic position on the WGS-84 ellipsoid.
///
/// Latitude and longitude are in radians, altitude in meters above the
/// ellipsoid. Longitude is kept wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl GeodeticCoord {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeoError> {
        if !(latitude.is_finite() && longitude.is_finite() && altitude.is_finite()) {
            return Err(GeoError::NonFinite);
        }
        if latitude.abs() > FRAC_PI_2 {
            return Err(GeoError::LatitudeOutOfRange(latitude));
        }
        Ok(Self {
            latitude,
            longitude: wrap_longitude(longitude),
            altitude,
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, altitude: f64) -> Result<Self, GeoError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), altitude)
    }
}

/// Earth-centered Earth-fixed Cartesian position, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcefCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Local East-North-Up position, meters, relative to a geodetic origin.
///
/// The origin is fixed when the coordinate is produced and travels with the
/// value so the inverse conversion needs no extra context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuCoord {
    pub east: f64,
    pub north: f64,
    pub up: f64,
    pub origin: GeodeticCoord,
}

/// Wrap a longitude to (-pi, pi].
pub fn wrap_longitude(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Prime-vertical radius of curvature at geodetic latitude `lat`.
fn prime_vertical_radius(lat: f64) -> f64 {
    let s = lat.sin();
    WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt()
}

/// Closed-form WGS-84 geodetic to ECEF conversion.
pub fn geodetic_to_ecef(g: GeodeticCoord) -> EcefCoord {
    let (slat, clat) = g.latitude.sin_cos();
    let (slon, clon) = g.longitude.sin_cos();
    let n = prime_vertical_radius(g.latitude);
    EcefCoord {
        x: (n + g.altitude) * clat * clon,
        y: (n + g.altitude) * clat * slon,
        z: (n * (1.0 - WGS84_E2) + g.altitude) * slat,
    }
}

/// Rotate `p - ecef(origin)` into the origin's local tangent frame.
pub fn ecef_to_enu(p: EcefCoord, origin: GeodeticCoord) -> EnuCoord {
    let o = geodetic_to_ecef(origin);
    let dx = p.x - o.x;
    let dy = p.y - o.y;
    let dz = p.z - o.z;
    let (slat, clat) = origin.latitude.sin_cos();
    let (slon, clon) = origin.longitude.sin_cos();
    EnuCoord {
        east: -slon * dx + clon * dy,
        north: -slat * clon * dx - slat * slon * dy + clat * dz,
        up: clat * clon * dx + clat * slon * dy + slat * dz,
        origin,
    }
}

/// Inverse of [`ecef_to_enu`]: local tangent-frame offset back to ECEF.
pub fn enu_to_ecef(p: EnuCoord) -> EcefCoord {
    let o = geodetic_to_ecef(p.origin);
    let (slat, clat) = p.origin.latitude.sin_cos();
    let (slon, clon) = p.origin.longitude.sin_cos();
    EcefCoord {
        x: o.x - slon * p.east - slat * clon * p.north + clat * clon * p.up,
        y: o.y + clon * p.east - slat * slon * p.north + clat * slon * p.up,
        z: o.z + clat * p.north + slat * p.up,
    }
}

/// ECEF to geodetic via Bowring's iteration on the reduced latitude.
///
/// Converges to < 1e-12 rad in a handful of iterations for any point with
/// altitude within a few hundred km of the ellipsoid; a fixed iteration cap
/// turns pathological inputs into an error instead of a spin.
pub fn ecef_to_geodetic(p: EcefCoord) -> Result<GeodeticCoord, GeoError> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    let rho = p.x.hypot(p.y);
    let longitude = if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) };
    let ep2 = WGS84_E2 / (1.0 - WGS84_E2);

    let bowring_phi = |beta: f64| -> f64 {
        let sb = beta.sin();
        let cb = beta.cos();
        (p.z + ep2 * WGS84_B * sb * sb * sb).atan2(rho - WGS84_A * WGS84_E2 * cb * cb * cb)
    };
    let mut beta = p.z.atan2((1.0 - WGS84_F) * rho);
    let mut converged = false;
    for _ in 0..MAX_LATITUDE_ITERS {
        let beta_next = ((1.0 - WGS84_F) * bowring_phi(beta).tan()).atan();
        if (beta_next - beta).abs() < LATITUDE_TOL_RAD {
            beta = beta_next;
            converged = true;
            break;
        }
        beta = beta_next;
    }
    if !converged {
        return Err(GeoError::LatitudeDidNotConverge(MAX_LATITUDE_ITERS));
    }
    let phi = bowring_phi(beta);

    let (sphi, cphi) = phi.sin_cos();
    // h = rho cos(phi) + z sin(phi) - a sqrt(1 - e^2 sin^2 phi) is well
    // conditioned at all latitudes, including the poles.
    let altitude = rho * cphi + p.z * sphi - WGS84_A * (1.0 - WGS84_E2 * sphi * sphi).sqrt();
    GeodeticCoord::new(phi.clamp(-FRAC_PI_2, FRAC_PI_2), longitude, altitude)
}

/// Invert the full geodetic -> ECEF -> ENU chain.
pub fn enu_to_geodetic(p: EnuCoord) -> Result<GeodeticCoord, GeoError> {
    ecef_to_geodetic(enu_to_ecef(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ecef_distance(a: EcefCoord, b: EcefCoord) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
    }

    #[test]
    fn equator_prime_meridian_lies_on_semi_major_axis() {
        let p = geodetic_to_ecef(GeodeticCoord::new(0.0, 0.0, 0.0).unwrap());
        assert_eq!(p.x, 6378137.0);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.z, 0.0);
    }

    #[test]
    fn north_pole_lies_on_semi_minor_axis() {
        let p = geodetic_to_ecef(GeodeticCoord::new(FRAC_PI_2, 0.0, 0.0).unwrap());
        assert!(p.x.abs() < 1e-6);
        assert!(p.y.abs() < 1e-6);
        assert!((p.z - 6356752.3142).abs() < 1e-4);
        assert!((p.z - WGS84_B).abs() < 1e-8);
    }

    #[test]
    fn mid_latitude_point_round_trips_through_enu() {
        let g = GeodeticCoord::new(0.7505, -1.3614, 100.0).unwrap();
        let enu = ecef_to_enu(geodetic_to_ecef(g), g);
        assert!(enu.east.abs() < 1e-9 && enu.north.abs() < 1e-9 && enu.up.abs() < 1e-9);
        let back = enu_to_geodetic(enu).unwrap();
        let err = ecef_distance(geodetic_to_ecef(back), geodetic_to_ecef(g));
        assert!(err < 1e-6, "round-trip error {err}");
    }

    #[test]
    fn origin_maps_to_enu_zero() {
        let origin = GeodeticCoord::from_degrees(43.0, -78.8, 180.0).unwrap();
        let enu = ecef_to_enu(geodetic_to_ecef(origin), origin);
        assert!(enu.east.abs() < 1e-9);
        assert!(enu.north.abs() < 1e-9);
        assert!(enu.up.abs() < 1e-9);
    }

    #[test]
    fn pure_altitude_offset_is_pure_up() {
        let origin = GeodeticCoord::from_degrees(43.0, -78.8, 180.0).unwrap();
        let raised = GeodeticCoord::from_degrees(43.0, -78.8, 181.0).unwrap();
        let enu = ecef_to_enu(geodetic_to_ecef(raised), origin);
        assert!(enu.east.abs() < 1e-9);
        assert!(enu.north.abs() < 1e-9);
        assert!((enu.up - 1.0).abs() < 1e-9);
    }

    #[test]
    fn enu_rotation_matches_matrix_oracle() {
        // Independent construction: build the ECEF->ENU rotation matrix
        // explicitly and apply it to a point ~50 m from the origin.
        let origin = GeodeticCoord::from_degrees(37.4, 122.1, 25.0).unwrap();
        let o = geodetic_to_ecef(origin);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..32 {
            let d = [
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            ];
            let p = EcefCoord {
                x: o.x + d[0],
                y: o.y + d[1],
                z: o.z + d[2],
            };
            let (slat, clat) = origin.latitude.sin_cos();
            let (slon, clon) = origin.longitude.sin_cos();
            let rot = nalgebra::Matrix3::new(
                -slon,
                clon,
                0.0,
                -slat * clon,
                -slat * slon,
                clat,
                clat * clon,
                clat * slon,
                slat,
            );
            let expect = rot * nalgebra::Vector3::new(d[0], d[1], d[2]);
            let enu = ecef_to_enu(p, origin);
            assert!((enu.east - expect.x).abs() < 1e-9);
            assert!((enu.north - expect.y).abs() < 1e-9);
            assert!((enu.up - expect.z).abs() < 1e-9);
        }
    }

    #[test]
    fn enu_preserves_distances() {
        let origin = GeodeticCoord::from_degrees(-12.0, 31.0, 400.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let a = EcefCoord {
                x: rng.gen_range(-1e5..1e5) + geodetic_to_ecef(origin).x,
                y: rng.gen_range(-1e5..1e5) + geodetic_to_ecef(origin).y,
                z: rng.gen_range(-1e5..1e5) + geodetic_to_ecef(origin).z,
            };
            let b = EcefCoord {
                x: a.x + rng.gen_range(-1e3..1e3),
                y: a.y + rng.gen_range(-1e3..1e3),
                z: a.z + rng.gen_range(-1e3..1e3),
            };
            let ea = ecef_to_enu(a, origin);
            let eb = ecef_to_enu(b, origin);
            let d_enu = ((ea.east - eb.east).powi(2)
                + (ea.north - eb.north).powi(2)
                + (ea.up - eb.up).powi(2))
            .sqrt();
            let d_ecef = ecef_distance(a, b);
            assert!((d_enu - d_ecef).abs() <= 1e-9 * d_ecef.max(1.0));
        }
    }

    #[test]
    fn up_axis_parallel_to_surface_normal() {
        let origin = GeodeticCoord::from_degrees(51.0, 7.0, 0.0).unwrap();
        let o = geodetic_to_ecef(origin);
        let (slat, clat) = origin.latitude.sin_cos();
        let (slon, clon) = origin.longitude.sin_cos();
        // Outward ellipsoid normal at the origin in ECEF.
        let n = [clat * clon, clat * slon, slat];
        let t = 3.0;
        let p = EcefCoord {
            x: o.x + t * n[0],
            y: o.y + t * n[1],
            z: o.z + t * n[2],
        };
        let enu = ecef_to_enu(p, origin);
        assert!(enu.east.abs() < 1e-9);
        assert!(enu.north.abs() < 1e-9);
        assert!((enu.up - t).abs() < 1e-9);
    }

    #[test]
    fn identity_round_trip_at_origin() {
        let origin = GeodeticCoord::from_degrees(10.0, 10.0, 50.0).unwrap();
        let g = enu_to_geodetic(EnuCoord {
            east: 0.0,
            north: 0.0,
            up: 0.0,
            origin,
        })
        .unwrap();
        assert!((g.latitude - origin.latitude).abs() < 1e-12);
        assert!((g.longitude - origin.longitude).abs() < 1e-12);
        assert!((g.altitude - origin.altitude).abs() < 1e-7);
    }

    #[test]
    fn straight_down_lands_on_ellipsoid_surface() {
        // ENU "down" follows the ellipsoid normal, so descending by the
        // origin altitude must land at altitude zero at the same lat/lon.
        let origin = GeodeticCoord::from_degrees(48.2, 16.4, 250.0).unwrap();
        let g = enu_to_geodetic(EnuCoord {
            east: 0.0,
            north: 0.0,
            up: -origin.altitude,
            origin,
        })
        .unwrap();
        assert!((g.latitude - origin.latitude).abs() < 1e-12);
        assert!((g.longitude - origin.longitude).abs() < 1e-12);
        assert!(g.altitude.abs() < 1e-7);
    }

    #[test]
    fn round_trip_error_below_micron_over_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let origin = GeodeticCoord::from_degrees(43.0, -78.8, 180.0).unwrap();
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let lat = rng.gen_range(-89.0_f64..89.0).to_radians();
            let lon = rng.gen_range(-180.0_f64..180.0).to_radians();
            let alt = rng.gen_range(-1.0e5_f64..1.0e5);
            let g = GeodeticCoord::new(lat, lon, alt).unwrap();
            let ecef = geodetic_to_ecef(g);
            let enu = ecef_to_enu(ecef, origin);
            let back = enu_to_geodetic(enu).unwrap();
            max_err = max_err.max(ecef_distance(geodetic_to_ecef(back), ecef));
        }
        assert!(max_err < 1e-6, "max round-trip error {max_err}");
    }

    #[test]
    fn longitude_wraps_to_half_open_interval() {
        assert!((wrap_longitude(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_longitude(PI), PI);
        assert_eq!(wrap_longitude(-PI), PI);
        assert!((wrap_longitude(3.0 * PI) - PI).abs() < 1e-9);
    }

    #[test]
    fn latitude_out_of_range_is_rejected() {
        assert!(matches!(
            GeodeticCoord::new(2.0, 0.0, 0.0),
            Err(GeoError::LatitudeOutOfRange(_))
        ));
    }
}
