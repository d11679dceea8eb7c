//! Trajectory metrics: RMSE between two trajectories, path length, and
//! velocity/acceleration profiles.
//!
//! Trajectories load from simulator state logs (odometry records) or from
//! CSV. Geodetic CSV fixes (`t,lat_deg,lon_deg,alt_m`) are converted to a
//! local ENU frame anchored at the first fix before comparison, matching the
//! usual GPS evaluation pipeline; Cartesian CSV (`t,x,y,z`) passes through.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geo::{ecef_to_enu, geodetic_to_ecef, GeodeticCoord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory I/O on `{path}`: {source}")]
    Io { path: String, source: io::Error },
    #[error("trajectory parse error: {0}")]
    Parse(String),
    #[error("trajectory is empty or too short: {0}")]
    TooShort(String),
    #[error("state log holds several excavators ({0:?}); pass an explicit id")]
    MultipleExcavators(Vec<String>),
    #[error("trajectories do not overlap in time")]
    NoOverlap,
    #[error("geodetic conversion failed: {0}")]
    Geo(String),
}

impl EvalError {
    pub fn is_config(&self) -> bool {
        !matches!(self, EvalError::Io { .. })
    }
}

/// A timestamped 3D path.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check(self, source: &str) -> Result<Self, EvalError> {
        if self.t.len() < 2 {
            return Err(EvalError::TooShort(format!(
                "{source}: need at least 2 samples, found {}",
                self.t.len()
            )));
        }
        if self.t.windows(2).any(|w| w[1] < w[0]) {
            return Err(EvalError::Parse(format!(
                "{source}: timestamps must be non-decreasing"
            )));
        }
        Ok(self)
    }

    /// Position at time `t` by linear interpolation, clamped at the ends.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        if t <= self.t[0] {
            return self.points[0];
        }
        if t >= *self.t.last().unwrap() {
            return *self.points.last().unwrap();
        }
        let idx = self.t.partition_point(|&x| x <= t);
        let (t0, t1) = (self.t[idx - 1], self.t[idx]);
        let alpha = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        self.points[idx - 1].lerp(&self.points[idx], alpha)
    }

    /// Cumulative arc length at each sample.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in self.points.windows(2) {
            acc += (w[1] - w[0]).norm();
            s.push(acc);
        }
        s
    }

    /// Position at a normalized arc-length fraction in [0, 1].
    pub fn at_arc_fraction(&self, arc: &[f64], frac: f64) -> Vector3<f64> {
        let total = *arc.last().unwrap();
        if total <= 0.0 {
            return self.points[0];
        }
        let target = frac.clamp(0.0, 1.0) * total;
        let idx = arc.partition_point(|&x| x <= target).min(arc.len() - 1);
        if idx == 0 {
            return self.points[0];
        }
        let (s0, s1) = (arc[idx - 1], arc[idx]);
        let alpha = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        self.points[idx - 1].lerp(&self.points[idx], alpha)
    }
}

/// Load a trajectory, dispatching on the file extension: `.csv` for CSV,
/// anything else is treated as a JSONL state log.
///
/// Geodetic CSV input is converted to ENU about `origin` when one is given,
/// otherwise about its own first fix; the origin actually used comes back so
/// a second trajectory can be expressed in the same frame. Cartesian input
/// returns no origin.
pub fn load_trajectory(
    path: &Path,
    excavator: Option<&str>,
    origin: Option<GeodeticCoord>,
) -> Result<(Trajectory, Option<GeodeticCoord>), EvalError> {
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => trajectory_from_csv(reader, origin),
        _ => Ok((trajectory_from_state_log(reader, excavator)?, None)),
    }
}

/// Extract the odometry track of one excavator from a JSONL state log.
///
/// With no explicit id the log must contain exactly one excavator.
pub fn trajectory_from_state_log<R: BufRead>(
    reader: R,
    excavator: Option<&str>,
) -> Result<Trajectory, EvalError> {
    let mut ids: Vec<String> = Vec::new();
    let mut rows: Vec<(String, f64, Vector3<f64>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if v["payload"]["kind"] != "odometry" {
            continue;
        }
        let id = v["excavator_id"]
            .as_str()
            .ok_or_else(|| EvalError::Parse(format!("line {}: missing excavator_id", lineno + 1)))?
            .to_string();
        if !ids.contains(&id) {
            ids.push(id.clone());
        }
        let t = v["timestamp"]
            .as_f64()
            .ok_or_else(|| EvalError::Parse(format!("line {}: missing timestamp", lineno + 1)))?;
        let p = &v["payload"]["position"];
        let point = Vector3::new(
            p[0].as_f64().unwrap_or(f64::NAN),
            p[1].as_f64().unwrap_or(f64::NAN),
            p[2].as_f64().unwrap_or(f64::NAN),
        );
        if !point.iter().all(|c| c.is_finite()) {
            return Err(EvalError::Parse(format!(
                "line {}: bad position array",
                lineno + 1
            )));
        }
        rows.push((id, t, point));
    }
    let selected = match excavator {
        Some(id) => id.to_string(),
        None => {
            if ids.len() > 1 {
                return Err(EvalError::MultipleExcavators(ids));
            }
            ids.first()
                .cloned()
                .ok_or_else(|| EvalError::TooShort("no odometry records in log".into()))?
        }
    };
    let mut traj = Trajectory::default();
    for (id, t, p) in rows {
        if id == selected {
            traj.t.push(t);
            traj.points.push(p);
        }
    }
    traj.check("state log")
}

/// Parse a CSV trajectory. Header `t,x,y,z` is taken as local Cartesian;
/// `t,lat_deg,lon_deg,alt_m` is converted to ENU about `origin` (the first
/// fix when none is supplied). Returns the ENU origin used, if any.
pub fn trajectory_from_csv<R: BufRead>(
    reader: R,
    origin: Option<GeodeticCoord>,
) -> Result<(Trajectory, Option<GeodeticCoord>), EvalError> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| EvalError::Parse(e.to_string()))?
        .ok_or_else(|| EvalError::TooShort("empty CSV".into()))?;
    let cols: Vec<String> = header
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let geodetic = match cols.as_slice() {
        [t, x, y, z] if t == "t" && x == "x" && y == "y" && z == "z" => false,
        [t, lat, lon, alt] if t == "t" && lat == "lat_deg" && lon == "lon_deg" && alt == "alt_m" => {
            true
        }
        _ => {
            return Err(EvalError::Parse(format!(
                "unsupported CSV header `{header}` (expected t,x,y,z or t,lat_deg,lon_deg,alt_m)"
            )))
        }
    };
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 2)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EvalError::Parse(format!(
                "line {}: expected 4 fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        let mut row = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            row[k] = f.parse().map_err(|_| {
                EvalError::Parse(format!("line {}: bad number `{f}`", lineno + 2))
            })?;
        }
        rows.push(row);
    }
    let mut traj = Trajectory::default();
    let mut used_origin = None;
    if geodetic {
        let anchor = match origin {
            Some(o) => o,
            None => rows
                .first()
                .map(|r| GeodeticCoord::from_degrees(r[1], r[2], r[3]))
                .transpose()
                .map_err(|e| EvalError::Geo(e.to_string()))?
                .ok_or_else(|| EvalError::TooShort("no rows in CSV".into()))?,
        };
        used_origin = Some(anchor);
        for r in &rows {
            let g = GeodeticCoord::from_degrees(r[1], r[2], r[3])
                .map_err(|e| EvalError::Geo(e.to_string()))?;
            let enu = ecef_to_enu(geodetic_to_ecef(g), anchor);
            traj.t.push(r[0]);
            traj.points.push(Vector3::new(enu.east, enu.north, enu.up));
        }
    } else {
        for r in &rows {
            traj.t.push(r[0]);
            traj.points.push(Vector3::new(r[1], r[2], r[3]));
        }
    }
    Ok((traj.check("csv")?, used_origin))
}

/// Root-mean-square Euclidean error between two trajectories resampled onto
/// a common uniform timebase over their overlap.
pub fn rmse(a: &Trajectory, b: &Trajectory, samples: usize) -> Result<f64, EvalError> {
    let t0 = a.t[0].max(b.t[0]);
    let t1 = a.t.last().unwrap().min(*b.t.last().unwrap());
    if t1 < t0 {
        return Err(EvalError::NoOverlap);
    }
    let n = samples.max(2);
    let mut sum_sq = 0.0;
    for k in 0..n {
        let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
        let d = a.at(t) - b.at(t);
        sum_sq += d.norm_squared();
    }
    Ok((sum_sq / n as f64).sqrt())
}

/// RMSE with both trajectories resampled by normalized arc length instead of
/// time (alignment for paths driven at different speeds).
pub fn rmse_arclength(a: &Trajectory, b: &Trajectory, samples: usize) -> Result<f64, EvalError> {
    let arc_a = a.arc_lengths();
    let arc_b = b.arc_lengths();
    let n = samples.max(2);
    let mut sum_sq = 0.0;
    for k in 0..n {
        let frac = k as f64 / (n - 1) as f64;
        let d = a.at_arc_fraction(&arc_a, frac) - b.at_arc_fraction(&arc_b, frac);
        sum_sq += d.norm_squared();
    }
    Ok((sum_sq / n as f64).sqrt())
}

/// Total path length: sum of consecutive Euclidean distances.
pub fn path_length(traj: &Trajectory) -> f64 {
    traj.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// One row of a velocity/acceleration profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub t: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Finite-difference speed and acceleration series.
///
/// Speeds are forward differences at each sample; acceleration is the
/// forward difference of the speeds. The last two samples carry the
/// preceding values so the series has one row per input sample.
pub fn motion_profile(traj: &Trajectory) -> Vec<ProfileRow> {
    let n = traj.len();
    if n < 2 {
        return Vec::new();
    }
    let mut speeds = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let dt = traj.t[k + 1] - traj.t[k];
        let v = if dt > 0.0 {
            (traj.points[k + 1] - traj.points[k]).norm() / dt
        } else {
            0.0
        };
        speeds.push(v);
    }
    let mut rows = Vec::with_capacity(n - 1);
    for k in 0..speeds.len() {
        let accel = if k + 1 < speeds.len() {
            let dt = traj.t[k + 1] - traj.t[k];
            if dt > 0.0 {
                (speeds[k + 1] - speeds[k]) / dt
            } else {
                0.0
            }
        } else if rows.is_empty() {
            0.0
        } else {
            let last: &ProfileRow = rows.last().unwrap();
            last.accel
        };
        rows.push(ProfileRow {
            t: traj.t[k],
            speed: speeds[k],
            accel,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_path() -> Trajectory {
        Trajectory {
            t: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            points: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 0.0),
            ],
        }
    }

    #[test]
    fn identical_trajectories_have_zero_rmse() {
        let a = square_path();
        assert_eq!(rmse(&a, &a, 500).unwrap(), 0.0);
        assert_eq!(rmse_arclength(&a, &a, 500).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_exact_rmse() {
        let a = square_path();
        let mut b = a.clone();
        let d = 1.376;
        for p in &mut b.points {
            p.x += d;
        }
        let got = rmse(&a, &b, 1000).unwrap();
        assert!((got - d).abs() < 1e-12, "rmse {got}");
    }

    #[test]
    fn unit_square_path_length_is_four() {
        assert_eq!(path_length(&square_path()), 4.0);
    }

    #[test]
    fn random_walk_path_length_matches_direct_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut traj = Trajectory::default();
        let mut p = Vector3::zeros();
        let mut expect = 0.0;
        traj.t.push(0.0);
        traj.points.push(p);
        for k in 1..200 {
            let step = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.2..0.2),
            );
            expect += step.norm();
            p += step;
            traj.t.push(k as f64);
            traj.points.push(p);
        }
        assert!((path_length(&traj) - expect).abs() < 1e-9);
    }

    #[test]
    fn interpolation_resamples_linearly() {
        let a = square_path();
        let mid = a.at(0.5);
        assert_eq!(mid, Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(a.at(-1.0), a.points[0]);
        assert_eq!(a.at(99.0), *a.points.last().unwrap());
    }

    #[test]
    fn csv_cartesian_round_trip() {
        let csv = "t,x,y,z\n0,0,0,0\n1,1,0,0\n2,1,1,0\n";
        let (traj, origin) = trajectory_from_csv(csv.as_bytes(), None).unwrap();
        assert!(origin.is_none());
        assert_eq!(traj.len(), 3);
        assert_eq!(traj.points[2], Vector3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn csv_geodetic_becomes_local_enu() {
        // ~1.11 m per 1e-5 deg of latitude at the equator.
        let csv = "t,lat_deg,lon_deg,alt_m\n0,0.0,0.0,100\n1,0.00001,0.0,100\n";
        let (traj, origin) = trajectory_from_csv(csv.as_bytes(), None).unwrap();
        assert!(origin.is_some());
        assert_eq!(traj.points[0], Vector3::zeros());
        assert!((traj.points[1].y - 1.105).abs() < 0.01, "{}", traj.points[1].y);
        assert!(traj.points[1].x.abs() < 1e-9);
    }

    #[test]
    fn shared_origin_places_two_tracks_in_one_frame() {
        let a = "t,lat_deg,lon_deg,alt_m\n0,0,0,10\n1,0.00001,0,10\n";
        let b = "t,lat_deg,lon_deg,alt_m\n0,0,0.00001,10\n1,0.00001,0.00001,10\n";
        let (ta, origin) = trajectory_from_csv(a.as_bytes(), None).unwrap();
        let (tb, _) = trajectory_from_csv(b.as_bytes(), origin).unwrap();
        let d = (tb.points[0] - ta.points[0]).norm();
        assert!((d - 1.113).abs() < 0.01, "east offset {d}");
    }

    #[test]
    fn bad_csv_header_is_rejected() {
        assert!(matches!(
            trajectory_from_csv("a,b,c,d\n1,2,3,4\n".as_bytes(), None),
            Err(EvalError::Parse(_))
        ));
    }

    #[test]
    fn state_log_extraction_requires_unique_excavator() {
        let log = concat!(
            "{\"timestamp\":0.0,\"excavator_id\":\"a\",\"topic\":\"/a/odom\",\"payload\":{\"kind\":\"odometry\",\"position\":[0,0,0],\"yaw\":0,\"velocity\":[0,0,0],\"yaw_rate\":0}}\n",
            "{\"timestamp\":0.0,\"excavator_id\":\"b\",\"topic\":\"/b/odom\",\"payload\":{\"kind\":\"odometry\",\"position\":[0,0,0],\"yaw\":0,\"velocity\":[0,0,0],\"yaw_rate\":0}}\n",
            "{\"timestamp\":1.0,\"excavator_id\":\"a\",\"topic\":\"/a/odom\",\"payload\":{\"kind\":\"odometry\",\"position\":[1,0,0],\"yaw\":0,\"velocity\":[0,0,0],\"yaw_rate\":0}}\n",
            "{\"timestamp\":1.0,\"excavator_id\":\"b\",\"topic\":\"/b/odom\",\"payload\":{\"kind\":\"odometry\",\"position\":[2,0,0],\"yaw\":0,\"velocity\":[0,0,0],\"yaw_rate\":0}}\n",
        );
        assert!(matches!(
            trajectory_from_state_log(log.as_bytes(), None),
            Err(EvalError::MultipleExcavators(_))
        ));
        let traj = trajectory_from_state_log(log.as_bytes(), Some("b")).unwrap();
        assert_eq!(traj.points[1].x, 2.0);
    }

    #[test]
    fn motion_profile_reports_constant_speed() {
        let mut traj = Trajectory::default();
        for k in 0..50 {
            traj.t.push(k as f64 * 0.1);
            traj.points.push(Vector3::new(k as f64 * 0.2, 0.0, 0.0));
        }
        let rows = motion_profile(&traj);
        assert_eq!(rows.len(), 49);
        for row in &rows {
            assert!((row.speed - 2.0).abs() < 1e-9);
            assert!(row.accel.abs() < 1e-9);
        }
    }

    #[test]
    fn arc_length_alignment_ignores_speed_differences() {
        // Same square path traced at different speeds.
        let a = square_path();
        let mut b = square_path();
        for (k, t) in b.t.iter_mut().enumerate() {
            *t = (k as f64).powi(2);
        }
        let aligned = rmse_arclength(&a, &b, 800).unwrap();
        assert!(aligned < 1e-9, "arc-aligned rmse {aligned}");
        let timed = rmse(&a, &b, 800).unwrap();
        assert!(timed > 0.1, "time-aligned rmse {timed}");
    }
}
