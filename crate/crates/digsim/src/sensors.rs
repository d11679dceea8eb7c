//! Simulated sensing: IMU with bias/noise, ground-truth odometry, joint
//! state, end-effector transform, bucket mass, and a heightfield range
//! scanner.
//!
//! Every sensor is a pure function of the excavator state except for the IMU
//! noise, which draws from a dedicated counter-based stream derived from
//! (scenario seed, excavator id, sensor id) so adding or removing one sensor
//! never disturbs another's readings. With zero noise every sensor replays
//! bit-identically.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::excavator::{
    base_twist, forward_kinematics, link_angular_velocity, link_pose, point_velocity,
    world_base_pose, ExcavatorModel, ExcavatorState, Link,
};
use crate::terrain::TerrainGrid;
use crate::GRAVITY_M_S2;

/// Sensor families supported by the scenario schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(rename = "IMU")]
    Imu,
    #[serde(rename = "ODOMETRY")]
    Odometry,
    #[serde(rename = "JOINT_STATE")]
    JointState,
    #[serde(rename = "TRANSFORM")]
    Transform,
    #[serde(rename = "BUCKET_MASS")]
    BucketMass,
    #[serde(rename = "RANGE")]
    Range,
}

impl SensorKind {
    pub fn default_rate_hz(self) -> f64 {
        match self {
            SensorKind::Imu => 100.0,
            _ => 50.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Imu => "imu",
            SensorKind::Odometry => "odometry",
            SensorKind::JointState => "joint_state",
            SensorKind::Transform => "transform",
            SensorKind::BucketMass => "bucket_mass",
            SensorKind::Range => "range",
        }
    }
}

/// Resolved sensor description.
///
/// `noise` is `[stddev, bias]` in the sensor's own units and applies per
/// axis; `rotation_deg` is an intrinsic x-y-z rotation of the sensor frame
/// relative to its mount link.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    pub topic: String,
    pub location: Link,
    pub noise: [f64; 2],
    pub offset: Vector3<f64>,
    pub rotation_deg: Vector3<f64>,
    pub rate_hz: f64,
    pub n_beams: usize,
    pub fov_deg: f64,
    pub max_range_m: f64,
}

impl SensorSpec {
    /// Sensor pose in its mount link frame.
    pub fn mount_iso(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.offset),
            intrinsic_xyz_rotation(self.rotation_deg),
        )
    }
}

/// Intrinsic x-y-z rotation from degrees.
pub fn intrinsic_xyz_rotation(deg: Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), deg.x.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.y.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), deg.z.to_radians())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSample {
    /// Specific force in the sensor frame, m/s^2. A stationary, level sensor
    /// reads +g on its up axis.
    pub linear_acceleration: [f64; 3],
    /// Angular velocity in the sensor frame, rad/s.
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometrySample {
    pub position: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 3],
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointStateSample {
    pub position: [f64; 4],
    pub velocity: [f64; 4],
    pub effort: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSample {
    pub translation: [f64; 3],
    /// Quaternion as [x, y, z, w].
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketMassSample {
    pub mass_kg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeSample {
    pub ranges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplePayload {
    Imu(ImuSample),
    Odometry(OdometrySample),
    JointState(JointStateSample),
    Transform(TransformSample),
    BucketMass(BucketMassSample),
    Range(RangeSample),
}

/// Everything a sensor can observe at one instant.
#[derive(Clone, Copy)]
pub struct SensorContext<'a> {
    pub model: &'a ExcavatorModel,
    pub state: &'a ExcavatorState,
    pub terrain: &'a TerrainGrid,
}

/// FNV-1a mix of the scenario seed and both identifiers; one stream per
/// sensor, stable against any other sensor being added or removed.
pub fn derive_sensor_stream(seed: u64, excavator_id: &str, sensor_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(excavator_id.as_bytes());
    eat(&[0]);
    eat(sensor_id.as_bytes());
    h
}

/// A mounted sensor with its private noise stream and sample clock.
#[derive(Debug, Clone)]
pub struct SensorInstance {
    pub spec: SensorSpec,
    rng: ChaCha8Rng,
    next_sample: u64,
    last_velocity: Option<(f64, Vector3<f64>)>,
}

impl SensorInstance {
    pub fn new(spec: SensorSpec, scenario_seed: u64, excavator_id: &str) -> Self {
        let stream = derive_sensor_stream(scenario_seed, excavator_id, &spec.id);
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(stream),
            next_sample: 0,
            last_velocity: None,
        }
    }

    /// Timestamp of the next pending sample: exact multiples of 1/rate
    /// aligned to simulation time zero.
    pub fn next_time(&self) -> f64 {
        self.next_sample as f64 / self.spec.rate_hz
    }

    /// Consume and return the next sample time if it is due by `t_limit`.
    pub fn pop_due(&mut self, t_limit: f64) -> Option<f64> {
        let t = self.next_time();
        if t <= t_limit + 1e-9 {
            self.next_sample += 1;
            Some(t)
        } else {
            None
        }
    }

    pub fn sample(&mut self, timestamp: f64, ctx: &SensorContext) -> SamplePayload {
        match self.spec.kind {
            SensorKind::Imu => SamplePayload::Imu(self.imu_sample(timestamp, ctx)),
            SensorKind::Odometry => SamplePayload::Odometry(odometry_sample(ctx)),
            SensorKind::JointState => SamplePayload::JointState(joint_state_sample(ctx)),
            SensorKind::Transform => SamplePayload::Transform(transform_sample(ctx)),
            SensorKind::BucketMass => SamplePayload::BucketMass(BucketMassSample {
                mass_kg: ctx.state.bucket_mass,
            }),
            SensorKind::Range => {
                let pose = world_base_pose(ctx.state)
                    * link_pose(ctx.model, &ctx.state.joint_angles, self.spec.location)
                    * self.spec.mount_iso();
                SamplePayload::Range(RangeSample {
                    ranges: range_scan(
                        &pose,
                        ctx.terrain,
                        self.spec.n_beams,
                        self.spec.fov_deg.to_radians(),
                        self.spec.max_range_m,
                    ),
                })
            }
        }
    }

    /// Specific force and angular rate in the sensor frame, with the
    /// configured constant bias and Gaussian noise per axis.
    ///
    /// Linear acceleration of the mount point comes from differencing its
    /// analytically computed velocity between samples; the first sample of a
    /// stream reports zero body acceleration.
    fn imu_sample(&mut self, timestamp: f64, ctx: &SensorContext) -> ImuSample {
        let mount_point = Point3::from(self.spec.offset);
        let velocity = point_velocity(ctx.model, ctx.state, self.spec.location, &mount_point);
        let accel = match self.last_velocity {
            Some((t_prev, v_prev)) if timestamp > t_prev => (velocity - v_prev) / (timestamp - t_prev),
            _ => Vector3::zeros(),
        };
        self.last_velocity = Some((timestamp, velocity));

        let rotation = (world_base_pose(ctx.state)
            * link_pose(ctx.model, &ctx.state.joint_angles, self.spec.location)
            * self.spec.mount_iso())
        .rotation;
        let gravity = Vector3::new(0.0, 0.0, -GRAVITY_M_S2);
        let mut specific_force = rotation.inverse() * (accel - gravity);
        let mut angular =
            rotation.inverse() * link_angular_velocity(ctx.model, ctx.state, self.spec.location);

        let [stddev, bias] = self.spec.noise;
        for v in specific_force.iter_mut().chain(angular.iter_mut()) {
            *v += bias;
        }
        if stddev > 0.0 {
            let normal = Normal::new(0.0, stddev).expect("validated stddev");
            for v in specific_force.iter_mut().chain(angular.iter_mut()) {
                *v += normal.sample(&mut self.rng);
            }
        }
        ImuSample {
            linear_acceleration: specific_force.into(),
            angular_velocity: angular.into(),
        }
    }
}

/// Ground-truth base pose and twist, no noise.
pub fn odometry_sample(ctx: &SensorContext) -> OdometrySample {
    let (v, yaw_rate) = base_twist(ctx.model, ctx.state);
    let heading = ctx.state.heading;
    OdometrySample {
        position: ctx.state.base_position.into(),
        yaw: heading,
        velocity: [v * heading.cos(), v * heading.sin(), 0.0],
        yaw_rate,
    }
}

/// Current joint positions, velocities, and efforts.
pub fn joint_state_sample(ctx: &SensorContext) -> JointStateSample {
    JointStateSample {
        position: ctx.state.joint_angles,
        velocity: ctx.state.joint_velocities,
        effort: ctx.state.joint_efforts,
    }
}

/// End-effector pose relative to the base.
pub fn transform_sample(ctx: &SensorContext) -> TransformSample {
    let pose = forward_kinematics(ctx.model, &ctx.state.joint_angles)
        .unwrap_or_else(|_| Isometry3::identity());
    let q = pose.rotation.into_inner();
    TransformSample {
        translation: pose.translation.vector.into(),
        rotation: [q.i, q.j, q.k, q.w],
    }
}

/// Ray-march `n_beams` rays against the terrain surface.
///
/// Beams fan in the sensor's x-z plane across `fov` (positive pitch aims
/// below the +x axis). March step is max(resolution/4, 1 cm) with one
/// bisection refinement on the bracketing interval; misses report
/// `max_range`.
pub fn range_scan(
    mount_pose: &Isometry3<f64>,
    terrain: &TerrainGrid,
    n_beams: usize,
    fov: f64,
    max_range: f64,
) -> Vec<f64> {
    let n = n_beams.max(1);
    let step = (terrain.resolution() / 4.0).max(0.01);
    let origin = mount_pose.translation.vector;
    let mut ranges = Vec::with_capacity(n);
    for b in 0..n {
        let pitch = if n == 1 {
            0.0
        } else {
            -fov / 2.0 + fov * b as f64 / (n - 1) as f64
        };
        let dir_sensor = Vector3::new(pitch.cos(), 0.0, -pitch.sin());
        let dir = mount_pose.rotation * dir_sensor;
        let below = |t: f64| -> bool {
            let p = origin + dir * t;
            match terrain.surface_height(p.x, p.y) {
                Ok(h) => p.z < h,
                Err(_) => false,
            }
        };
        let mut hit = None;
        let mut t = step;
        while t <= max_range {
            if below(t) {
                // One bisection refinement of the bracket.
                let lo = t - step;
                let mid = (lo + t) / 2.0;
                let range = if below(mid) {
                    (lo + mid) / 2.0
                } else {
                    (mid + t) / 2.0
                };
                hit = Some(range.clamp(0.0, max_range));
                break;
            }
            t += step;
        }
        ranges.push(hit.unwrap_or(max_range));
    }
    ranges
}
