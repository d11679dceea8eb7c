//! The machine: slew/boom/arm/bucket kinematic chain, time-varying joint
//! velocity response, differential-drive tracks coupled to soil traction and
//! sinkage, shovel cutting, and static joint torques.
//!
//! Joint convention: all angles zero puts the manipulator fully extended
//! along the base +x axis at the slew-axis height. Positive boom/arm/bucket
//! angles pitch the respective link upward; slew is a right-handed rotation
//! about +z.

use std::collections::BTreeMap;

use nalgebra::{Isometry3, Matrix3x4, Point3, Translation3, UnitQuaternion, Vector3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::soil::{self, ToolEngagement};
use crate::terrain::{self, MatId, SoilParticle, TerrainGrid};
use crate::GRAVITY_M_S2;

/// Commanded-value change that restarts the velocity-response clock.
pub const COMMAND_DEADBAND: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ExcavatorError {
    #[error("joint {joint} angle {angle:.4} rad outside limits [{lo:.4}, {hi:.4}]")]
    JointLimit {
        joint: &'static str,
        angle: f64,
        lo: f64,
        hi: f64,
    },
}

/// Manipulator joints in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    Slew = 0,
    Boom = 1,
    Arm = 2,
    Bucket = 3,
}

impl Joint {
    pub const ALL: [Joint; 4] = [Joint::Slew, Joint::Boom, Joint::Arm, Joint::Bucket];

    pub fn name(self) -> &'static str {
        match self {
            Joint::Slew => "slew",
            Joint::Boom => "boom",
            Joint::Arm => "arm",
            Joint::Bucket => "bucket",
        }
    }
}

/// Links a sensor can be mounted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Chassis,
    Boom,
    Arm,
    Bucket,
}

impl Link {
    pub fn parse(s: &str) -> Option<Link> {
        match s {
            "CHASSIS" => Some(Link::Chassis),
            "BOOM" => Some(Link::Boom),
            "ARM" => Some(Link::Arm),
            "BUCKET" => Some(Link::Bucket),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Chassis => "CHASSIS",
            Link::Boom => "BOOM",
            Link::Arm => "ARM",
            Link::Bucket => "BUCKET",
        }
    }
}

/// Velocity-response shape parameters for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDynamics {
    /// Oscillation frequency, 1/s.
    pub eta: f64,
    /// Decay rate, 1/s.
    pub beta: f64,
    /// Phase, rad.
    pub phi: f64,
}

impl Default for JointDynamics {
    fn default() -> Self {
        Self {
            eta: 20.0,
            beta: 6.0,
            phi: 0.0,
        }
    }
}

/// Per-joint response parameters for the boom, arm, and bucket. The slew
/// joint always responds ideally.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointDynamicsParams {
    pub boom: JointDynamics,
    pub arm: JointDynamics,
    pub bucket: JointDynamics,
}

impl JointDynamicsParams {
    pub fn for_joint(&self, joint: Joint) -> Option<&JointDynamics> {
        match joint {
            Joint::Slew => None,
            Joint::Boom => Some(&self.boom),
            Joint::Arm => Some(&self.arm),
            Joint::Bucket => Some(&self.bucket),
        }
    }
}

/// Shovel blade geometry, expressed in the bucket link frame (origin at the
/// bucket joint, +x toward the cutting edge).
#[derive(Debug, Clone, PartialEq)]
pub struct ShovelGeometry {
    pub width: f64,
    pub top_edge: [Point3<f64>; 2],
    pub bottom_edge: [Point3<f64>; 2],
    pub cutting_edge: [Point3<f64>; 2],
    /// Heaped volume the bucket can hold, m^3 (loose material).
    pub capacity: f64,
}

impl ShovelGeometry {
    /// A simple scoop: cutting edge at the link tip, top edge halfway back
    /// and above so the face leans toward the machine.
    pub fn standard(width: f64, bucket_length: f64, capacity: f64) -> Self {
        let w = width / 2.0;
        let l = bucket_length;
        Self {
            width,
            top_edge: [
                Point3::new(0.5 * l, -w, 0.4 * l),
                Point3::new(0.5 * l, w, 0.4 * l),
            ],
            bottom_edge: [
                Point3::new(0.4 * l, -w, -0.15 * l),
                Point3::new(0.4 * l, w, -0.15 * l),
            ],
            cutting_edge: [Point3::new(l, -w, 0.0), Point3::new(l, w, 0.0)],
            capacity,
        }
    }
}

/// Physical parameters of one excavator.
///
/// Defaults describe a representative compact 4-ton machine; every value can
/// be overridden from the scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcavatorModel {
    /// Boom, arm, bucket link lengths, m.
    pub link_lengths: [f64; 3],
    /// Boom, arm, bucket link masses, kg.
    pub link_masses: [f64; 3],
    /// Center-of-mass offset along each link, m.
    pub link_com_offsets: [f64; 3],
    /// Joint limits (min, max) for slew, boom, arm, bucket, rad.
    pub joint_limits: [(f64, f64); 4],
    /// Height of the boom joint above the track contact plane, m.
    pub slew_axis_height: f64,
    /// Lateral distance between track centerlines, m.
    pub track_gauge: f64,
    pub track_length: f64,
    pub track_width: f64,
    /// Track speed at full input, m/s.
    pub track_speed_max: f64,
    /// Total machine mass, kg.
    pub machine_mass: f64,
    pub shovel: ShovelGeometry,
    pub plow_width: f64,
    /// Blade depth below the local surface at full plow input, m.
    pub plow_max_depth: f64,
    pub joint_dynamics: JointDynamicsParams,
    /// Joint speed at full input for slew, boom, arm, bucket, rad/s.
    pub omega_max: [f64; 4],
    /// Rolling resistance as a fraction of machine weight.
    pub rolling_resistance: f64,
}

impl Default for ExcavatorModel {
    fn default() -> Self {
        Self {
            link_lengths: [2.2, 1.4, 0.9],
            link_masses: [260.0, 150.0, 120.0],
            link_com_offsets: [1.1, 0.7, 0.4],
            joint_limits: [
                (-1.0e9, 1.0e9), // slew rotates freely
                (-1.2, 1.2),
                (-2.6, 2.6),
                (-2.9, 2.9),
            ],
            slew_axis_height: 0.8,
            track_gauge: 1.4,
            track_length: 1.6,
            track_width: 0.35,
            track_speed_max: 1.2,
            machine_mass: 3900.0,
            shovel: ShovelGeometry::standard(0.55, 0.9, 0.08),
            plow_width: 1.5,
            plow_max_depth: 0.06,
            joint_dynamics: JointDynamicsParams::default(),
            omega_max: [0.6, 0.5, 0.6, 0.8],
            rolling_resistance: 0.05,
        }
    }
}

/// Normalized control inputs in [-1, 1], one per actuated degree of freedom.
///
/// Positive plow input lowers the blade.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlChannels {
    pub slew: f64,
    pub boom: f64,
    pub arm: f64,
    pub bucket: f64,
    pub track_left: f64,
    pub track_right: f64,
    pub plow: f64,
}

impl ControlChannels {
    pub fn joint(&self, joint: Joint) -> f64 {
        match joint {
            Joint::Slew => self.slew,
            Joint::Boom => self.boom,
            Joint::Arm => self.arm,
            Joint::Bucket => self.bucket,
        }
    }

    /// Name of the first channel outside [-1, 1], if any.
    pub fn out_of_range_channel(&self) -> Option<&'static str> {
        let pairs = [
            ("slew", self.slew),
            ("boom", self.boom),
            ("arm", self.arm),
            ("bucket", self.bucket),
            ("track_left", self.track_left),
            ("track_right", self.track_right),
            ("plow", self.plow),
        ];
        pairs
            .iter()
            .find(|(_, v)| !(-1.0..=1.0).contains(v) || !v.is_finite())
            .map(|(n, _)| *n)
    }
}

/// Joint-speed controller behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActuationMode {
    /// Target speed reached instantly.
    Ideal,
    /// Target speed with the oscillating first-order transient.
    Parameterized,
}

/// Full dynamic state of one excavator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcavatorState {
    /// World position of the base center at the track contact plane.
    pub base_position: Vector3<f64>,
    /// World yaw of the base, rad.
    pub heading: f64,
    /// Current track sinkage below the local surface, m.
    pub sinkage: f64,
    /// Slew, boom, arm, bucket angles, rad.
    pub joint_angles: [f64; 4],
    pub joint_velocities: [f64; 4],
    /// Gravity plus digging reaction per joint, N*m.
    pub joint_efforts: [f64; 4],
    /// Effective left/right track ground speeds, m/s.
    pub track_speeds: (f64, f64),
    /// Payload mass currently in the bucket, kg.
    pub bucket_mass: f64,
    /// Material of the payload, when any.
    pub bucket_material: Option<MatId>,
    /// Horizontal soil resistance on the shovel from the last sweep, N.
    pub dig_resistance: f64,
    /// Held command value per joint (deadband filtered).
    pub held_commands: [f64; 4],
    /// Time each joint's current command began, s.
    pub dig_phase_start: [f64; 4],
    /// Simulation time of this snapshot, s.
    pub time: f64,
}

impl ExcavatorState {
    pub fn new(position: Vector3<f64>, heading: f64) -> Self {
        Self {
            base_position: position,
            heading,
            sinkage: 0.0,
            joint_angles: [0.0; 4],
            joint_velocities: [0.0; 4],
            joint_efforts: [0.0; 4],
            track_speeds: (0.0, 0.0),
            bucket_mass: 0.0,
            bucket_material: None,
            dig_resistance: 0.0,
            held_commands: [0.0; 4],
            dig_phase_start: [0.0; 4],
            time: 0.0,
        }
    }
}

fn validate_joints(model: &ExcavatorModel, q: &[f64; 4]) -> Result<(), ExcavatorError> {
    for joint in Joint::ALL {
        let k = joint as usize;
        let (lo, hi) = model.joint_limits[k];
        if q[k] < lo || q[k] > hi {
            return Err(ExcavatorError::JointLimit {
                joint: joint.name(),
                angle: q[k],
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Pose of a link frame in the base frame.
///
/// The chassis frame is the base frame itself; manipulator link frames sit
/// at their proximal joint with +x along the link.
pub fn link_pose(model: &ExcavatorModel, q: &[f64; 4], link: Link) -> Isometry3<f64> {
    if link == Link::Chassis {
        return Isometry3::identity();
    }
    let h = model.slew_axis_height;
    let [l1, l2, _] = model.link_lengths;
    let t1 = q[1];
    let t2 = q[1] + q[2];
    let t3 = q[1] + q[2] + q[3];
    let (radial, height, pitch) = match link {
        Link::Boom => (0.0, h, t1),
        Link::Arm => (l1 * t1.cos(), h + l1 * t1.sin(), t2),
        Link::Bucket => (
            l1 * t1.cos() + l2 * t2.cos(),
            h + l1 * t1.sin() + l2 * t2.sin(),
            t3,
        ),
        Link::Chassis => unreachable!(),
    };
    let slew = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[0]);
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -pitch);
    let position = slew * Vector3::new(radial, 0.0, height);
    Isometry3::from_parts(Translation3::from(position), slew * tilt)
}

/// End-effector pose (bucket tip) in the base frame.
pub fn forward_kinematics(
    model: &ExcavatorModel,
    q: &[f64; 4],
) -> Result<Isometry3<f64>, ExcavatorError> {
    validate_joints(model, q)?;
    let tip = Point3::new(model.link_lengths[2], 0.0, 0.0);
    let pose = link_pose(model, q, Link::Bucket);
    Ok(Isometry3::from_parts(
        Translation3::from(pose.transform_point(&tip).coords),
        pose.rotation,
    ))
}

/// World pose of the excavator base.
pub fn world_base_pose(state: &ExcavatorState) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(state.base_position),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), state.heading),
    )
}

/// Shovel edge segments in world coordinates.
#[derive(Debug, Clone)]
pub struct ShovelEdgesWorld {
    pub cutting: [Point3<f64>; 2],
    pub top: [Point3<f64>; 2],
    pub bottom: [Point3<f64>; 2],
}

pub fn shovel_edges_world(model: &ExcavatorModel, state: &ExcavatorState) -> ShovelEdgesWorld {
    let pose = world_base_pose(state) * link_pose(model, &state.joint_angles, Link::Bucket);
    let map = |seg: &[Point3<f64>; 2]| [pose.transform_point(&seg[0]), pose.transform_point(&seg[1])];
    ShovelEdgesWorld {
        cutting: map(&model.shovel.cutting_edge),
        top: map(&model.shovel.top_edge),
        bottom: map(&model.shovel.bottom_edge),
    }
}

/// Joint angular velocity at time `t` since the command began.
///
/// The steady-state speed is the input times the joint's full-scale rate;
/// the transient multiplies it by `1 + sin(eta t + phi) exp(-beta t)`. The
/// slew joint responds ideally.
pub fn joint_velocity_profile(t: f64, input: f64, joint: Joint, model: &ExcavatorModel) -> f64 {
    let omega_ss = input.clamp(-1.0, 1.0) * model.omega_max[joint as usize];
    match model.joint_dynamics.for_joint(joint) {
        None => omega_ss,
        Some(d) => omega_ss * (1.0 + (d.eta * t + d.phi).sin() * (-d.beta * t).exp()),
    }
}

/// Antiderivative of `sin(eta t + phi) exp(-beta t)`.
fn transient_antiderivative(d: &JointDynamics, t: f64) -> f64 {
    let arg = d.eta * t + d.phi;
    -(-d.beta * t).exp() * (d.beta * arg.sin() + d.eta * arg.cos())
        / (d.beta * d.beta + d.eta * d.eta)
}

/// Exact angle increment of the velocity profile over `[t0, t1]` for unit
/// steady-state speed.
pub fn profile_increment(d: &JointDynamics, t0: f64, t1: f64) -> f64 {
    (t1 - t0) + transient_antiderivative(d, t1) - transient_antiderivative(d, t0)
}

/// Advance all joints one tick.
///
/// In parameterized mode the angle increment integrates the velocity profile
/// in closed form over the tick, so the integrated motion is exact for any
/// dt. Angles clamp at their limits with the velocity zeroed on contact.
pub fn step_joints(
    state: &mut ExcavatorState,
    model: &ExcavatorModel,
    channels: &ControlChannels,
    dt: f64,
    mode: ActuationMode,
) {
    debug_assert!(dt > 0.0);
    for joint in Joint::ALL {
        let k = joint as usize;
        let u = channels.joint(joint).clamp(-1.0, 1.0);
        if (u - state.held_commands[k]).abs() > COMMAND_DEADBAND {
            state.held_commands[k] = u;
            state.dig_phase_start[k] = state.time;
        }
        let (dq, v_end) = match (mode, model.joint_dynamics.for_joint(joint)) {
            (ActuationMode::Ideal, _) | (_, None) => {
                let v = u * model.omega_max[k];
                (v * dt, v)
            }
            (ActuationMode::Parameterized, Some(d)) => {
                let omega_ss = state.held_commands[k] * model.omega_max[k];
                let t0 = (state.time - state.dig_phase_start[k]).max(0.0);
                let t1 = t0 + dt;
                (
                    omega_ss * profile_increment(d, t0, t1),
                    joint_velocity_profile(t1, state.held_commands[k], joint, model),
                )
            }
        };
        let (lo, hi) = model.joint_limits[k];
        let target = state.joint_angles[k] + dq;
        if target <= lo {
            state.joint_angles[k] = lo;
            state.joint_velocities[k] = 0.0;
        } else if target >= hi {
            state.joint_angles[k] = hi;
            state.joint_velocities[k] = 0.0;
        } else {
            state.joint_angles[k] = target;
            state.joint_velocities[k] = v_end;
        }
    }
}

/// Static gravity torque per joint for the current pose and payload, N*m.
///
/// Returns the sagging moment each pitch joint has to hold: the sum over
/// distal link masses and the payload of horizontal lever times weight. The
/// payload acts at the bucket link center. The slew joint carries no gravity
/// moment.
pub fn joint_torque(model: &ExcavatorModel, q: &[f64; 4], bucket_mass: f64) -> [f64; 4] {
    let h = model.slew_axis_height;
    let [l1, l2, l3] = model.link_lengths;
    let t1 = q[1];
    let t2 = q[1] + q[2];
    let t3 = q[1] + q[2] + q[3];
    // Radial (horizontal, in the slewed plane) coordinates of the pitch
    // joints and of every mass point.
    let j_boom = 0.0;
    let j_arm = l1 * t1.cos();
    let j_bucket = j_arm + l2 * t2.cos();
    let _ = h;
    let com = [
        j_boom + model.link_com_offsets[0] * t1.cos(),
        j_arm + model.link_com_offsets[1] * t2.cos(),
        j_bucket + model.link_com_offsets[2] * t3.cos(),
    ];
    let payload = j_bucket + 0.5 * l3 * t3.cos();
    let g = GRAVITY_M_S2;
    let torque_about = |joint_r: f64, first_link: usize| -> f64 {
        let mut tau = 0.0;
        for (com_r, mass) in com.iter().zip(model.link_masses).skip(first_link) {
            tau += mass * g * (com_r - joint_r);
        }
        tau + bucket_mass * g * (payload - joint_r)
    };
    [
        0.0,
        torque_about(j_boom, 0),
        torque_about(j_arm, 1),
        torque_about(j_bucket, 2),
    ]
}

/// Position Jacobian of a point riding on `link`, in the base frame.
///
/// Columns are d(position)/d(q) for slew, boom, arm, bucket; joints distal
/// to the link contribute zero.
pub fn point_jacobian(
    model: &ExcavatorModel,
    q: &[f64; 4],
    link: Link,
    local: &Point3<f64>,
) -> Matrix3x4<f64> {
    let mut jac = Matrix3x4::zeros();
    let p = link_pose(model, q, link).transform_point(local).coords;
    if link == Link::Chassis {
        return jac;
    }
    // Slew: rotation about +z through the base origin.
    jac.set_column(0, &Vector3::z().cross(&p));
    // Pitch joints rotate about the slewed -y axis (positive angle lifts).
    let axis = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[0]) * -Vector3::y();
    let pitch_count = match link {
        Link::Boom => 1,
        Link::Arm => 2,
        Link::Bucket => 3,
        Link::Chassis => 0,
    };
    let joint_links = [Link::Boom, Link::Arm, Link::Bucket];
    for (idx, jl) in joint_links.iter().enumerate().take(pitch_count) {
        let origin = link_pose(model, q, *jl).translation.vector;
        jac.set_column(idx + 1, &axis.cross(&(p - origin)));
    }
    jac
}

/// World-frame velocity of a point riding on `link`.
pub fn point_velocity(
    model: &ExcavatorModel,
    state: &ExcavatorState,
    link: Link,
    local: &Point3<f64>,
) -> Vector3<f64> {
    let (v_lin, yaw_rate) = base_twist(model, state);
    let pose = world_base_pose(state);
    let p_world = (pose * link_pose(model, &state.joint_angles, link)).transform_point(local);
    let r = p_world.coords - state.base_position;
    let mut v = Vector3::new(v_lin * state.heading.cos(), v_lin * state.heading.sin(), 0.0)
        + Vector3::new(0.0, 0.0, yaw_rate).cross(&r);
    if link != Link::Chassis {
        let jac = point_jacobian(model, &state.joint_angles, link, local);
        let qd = Vector3::from_iterator(
            // 4-vector product done manually to keep the 3x4 shape simple
            (0..3).map(|row| {
                (0..4)
                    .map(|col| jac[(row, col)] * state.joint_velocities[col])
                    .sum::<f64>()
            }),
        );
        v += pose.rotation * qd;
    }
    v
}

/// World-frame angular velocity of a link.
pub fn link_angular_velocity(
    model: &ExcavatorModel,
    state: &ExcavatorState,
    link: Link,
) -> Vector3<f64> {
    let _ = model;
    let (_, yaw_rate) = base_twist(model, state);
    if link == Link::Chassis {
        return Vector3::new(0.0, 0.0, yaw_rate);
    }
    let qd = &state.joint_velocities;
    let pitch_rate = match link {
        Link::Boom => qd[1],
        Link::Arm => qd[1] + qd[2],
        Link::Bucket => qd[1] + qd[2] + qd[3],
        Link::Chassis => 0.0,
    };
    let a = state.heading + state.joint_angles[0];
    let y_axis = Vector3::new(-a.sin(), a.cos(), 0.0);
    Vector3::new(0.0, 0.0, yaw_rate + qd[0]) - pitch_rate * y_axis
}

/// Linear speed and yaw rate of the base from the track speeds.
pub fn base_twist(model: &ExcavatorModel, state: &ExcavatorState) -> (f64, f64) {
    let (vl, vr) = state.track_speeds;
    ((vl + vr) / 2.0, (vr - vl) / model.track_gauge)
}

/// Advance the tracked base one tick.
///
/// Commanded speeds scale by the traction the soil can actually carry: the
/// slip needed to develop the required thrust (rolling resistance plus
/// engaged blade/shovel drag) is read off the thrust-slip curve and comes
/// out of the ground speed. Sinkage follows the contact pressure, and the
/// cells under both tracks compact, leaving ruts. A lowered plow blade cuts
/// a strip along the path and adds its own drag.
pub fn step_tracks(
    state: &mut ExcavatorState,
    model: &ExcavatorModel,
    channels: &ControlChannels,
    grid: &mut TerrainGrid,
    particles: &mut Vec<SoilParticle>,
    rng: &mut ChaCha8Rng,
    dt: f64,
) {
    debug_assert!(dt > 0.0);
    let v_cmd_l = channels.track_left.clamp(-1.0, 1.0) * model.track_speed_max;
    let v_cmd_r = channels.track_right.clamp(-1.0, 1.0) * model.track_speed_max;

    let material = match grid.cell_at(state.base_position.x, state.base_position.y) {
        Some((i, j)) => grid.top_material(i, j),
        None => grid.default_material(),
    };
    let m = grid.material(material).clone();
    let weight = (model.machine_mass + state.bucket_mass) * GRAVITY_M_S2;
    let contact_area = 2.0 * model.track_length * model.track_width;
    let pressure = weight / contact_area;
    let sink = soil::sinkage(pressure, &m, model.track_width);

    // Thrust the tracks must develop to hold speed.
    let mut required = model.rolling_resistance * weight;
    if sink > 0.0 {
        // The sunken track front bulldozes a strip of soil.
        let front = ToolEngagement {
            width: 2.0 * model.track_width,
            depth: sink,
            rake_angle: std::f64::consts::FRAC_PI_2,
            surcharge: 0.0,
        };
        required += soil::fee_force(&front, &m, GRAVITY_M_S2).unwrap_or(0.0);
    }
    let plow_depth = channels.plow.clamp(-1.0, 1.0).max(0.0) * model.plow_max_depth;
    if plow_depth > 0.0 {
        let blade = ToolEngagement {
            width: model.plow_width,
            depth: plow_depth,
            rake_angle: std::f64::consts::FRAC_PI_2,
            surcharge: 0.0,
        };
        required += soil::fee_force(&blade, &m, GRAVITY_M_S2).unwrap_or(0.0);
    }
    required += state.dig_resistance;

    let efficiency = match soil::required_slip(&m, weight, contact_area, required) {
        Some(slip) => (1.0 - slip).max(0.0),
        None => 0.0,
    };
    let vl = efficiency * v_cmd_l;
    let vr = efficiency * v_cmd_r;
    state.track_speeds = (vl, vr);

    let prev_position = state.base_position;
    let prev_heading = state.heading;
    let v = (vl + vr) / 2.0;
    let w = (vr - vl) / model.track_gauge;
    // Exact constant-twist arc over the tick.
    if w.abs() < 1e-9 {
        state.base_position.x += v * state.heading.cos() * dt;
        state.base_position.y += v * state.heading.sin() * dt;
    } else {
        let theta = state.heading;
        state.base_position.x += v / w * ((theta + w * dt).sin() - theta.sin());
        state.base_position.y -= v / w * ((theta + w * dt).cos() - theta.cos());
    }
    state.heading += w * dt;

    // Keep the machine on the grid.
    let (x0, y0, x1, y1) = grid.bounds();
    let margin = (model.track_length.max(model.track_gauge + model.track_width) / 2.0)
        .min((x1 - x0) / 2.0 - 1e-6)
        .min((y1 - y0) / 2.0 - 1e-6);
    state.base_position.x = state.base_position.x.clamp(x0 + margin, x1 - margin);
    state.base_position.y = state.base_position.y.clamp(y0 + margin, y1 - margin);

    state.sinkage = sink;
    if let Ok(surface) = grid.surface_height(state.base_position.x, state.base_position.y) {
        state.base_position.z = surface - sink;
    }

    // Rut compaction under both tracks.
    let (sh, ch) = state.heading.sin_cos();
    let lateral = Vector3::new(-sh, ch, 0.0);
    for side in [-1.0, 1.0] {
        let center = state.base_position + lateral * (side * model.track_gauge / 2.0);
        let cells = grid.columns_in_rect(
            center.x,
            center.y,
            model.track_length / 2.0,
            model.track_width / 2.0,
            state.heading,
        );
        grid.compact(&cells, pressure);
    }

    // Plow cut along the path actually travelled this tick.
    if plow_depth > 0.0 {
        let front = model.track_length / 2.0 + 0.2;
        let blade_prev = Vector3::new(
            prev_position.x + front * prev_heading.cos(),
            prev_position.y + front * prev_heading.sin(),
            0.0,
        );
        let blade_now = Vector3::new(
            state.base_position.x + front * state.heading.cos(),
            state.base_position.y + front * state.heading.sin(),
            0.0,
        );
        let path = blade_now - blade_prev;
        let travelled = path.norm();
        if travelled > 1e-9 {
            let mid = (blade_prev + blade_now) / 2.0;
            let cells = grid.columns_in_rect(
                mid.x,
                mid.y,
                travelled / 2.0,
                model.plow_width / 2.0,
                path.y.atan2(path.x),
            );
            for (i, j) in cells {
                let cut = grid.remove_depth(i, j, plow_depth);
                let (cx, cy) = grid.cell_center(i, j);
                let surface = grid.column_height(i, j);
                for (mat, mass) in cut.removed {
                    let mm = grid.material(mat);
                    particles.extend(terrain::spawn_particles(
                        mass,
                        mat,
                        mm.density,
                        mm.swell_factor,
                        Vector3::new(cx, cy, surface + 0.05),
                        grid.resolution() * 0.4,
                        Vector3::new(path.x / dt * 0.3, path.y / dt * 0.3, 0.1),
                        rng,
                    ));
                }
            }
        }
    }
}

/// One shovel pass over the terrain.
///
/// The cutting edge's swept quad (previous to current position) defines the
/// footprint; where the edge is below the surface and the face forms a valid
/// passive wedge against the motion direction, the soil fails and the swept
/// columns are cut down to the edge. Removed mass fills the bucket up to
/// capacity, the rest spawns as loose particles. The separation force maps
/// through the Jacobian transpose into the reported joint efforts. A bucket
/// whose face tips below the horizontal releases its payload.
pub fn bucket_sweep(
    state: &mut ExcavatorState,
    model: &ExcavatorModel,
    grid: &mut TerrainGrid,
    particles: &mut Vec<SoilParticle>,
    rng: &mut ChaCha8Rng,
    dt: f64,
    prev_cutting_edge: &[Point3<f64>; 2],
) {
    debug_assert!(dt > 0.0);
    let edges = shovel_edges_world(model, state);
    let edge_mid = nalgebra::center(&edges.cutting[0], &edges.cutting[1]);
    let top_mid = nalgebra::center(&edges.top[0], &edges.top[1]);
    let face = top_mid - edge_mid;

    state.dig_resistance = 0.0;
    state.joint_efforts = joint_torque(model, &state.joint_angles, state.bucket_mass);

    // Dump: opening tipped past the cutting edge.
    if face.z < 0.0 && state.bucket_mass > 0.0 {
        let mat = state.bucket_material.unwrap_or(grid.default_material());
        let m = grid.material(mat).clone();
        particles.extend(terrain::spawn_particles(
            state.bucket_mass,
            mat,
            m.density,
            m.swell_factor,
            edge_mid.coords,
            model.shovel.width / 2.0,
            Vector3::new(0.0, 0.0, -0.2),
            rng,
        ));
        state.bucket_mass = 0.0;
        state.bucket_material = None;
        return;
    }

    let prev_mid = nalgebra::center(&prev_cutting_edge[0], &prev_cutting_edge[1]);
    let sweep = edge_mid - prev_mid;
    if sweep.norm() < 1e-9 {
        return;
    }
    let Ok(surface_mid) = grid.surface_height(edge_mid.x, edge_mid.y) else {
        return;
    };
    let depth_mid = surface_mid - edge_mid.z;
    if depth_mid <= 0.0 {
        return;
    }

    // Rake angle between the face and the horizontal motion direction.
    let motion_h = Vector3::new(sweep.x, sweep.y, 0.0);
    let rake = if motion_h.norm() > 1e-9 {
        let m_hat = motion_h.normalize();
        face.z.atan2(face.dot(&m_hat))
    } else {
        std::f64::consts::FRAC_PI_2
    };
    if rake <= 1e-3 {
        return;
    }

    let material = grid
        .cell_at(edge_mid.x, edge_mid.y)
        .map(|(i, j)| grid.top_material(i, j))
        .unwrap_or(grid.default_material());
    let m = grid.material(material).clone();

    // Surcharge from loose particles resting over the cut.
    let span = motion_h.norm().max(grid.resolution());
    let surcharge_area = (model.shovel.width + grid.resolution()) * span;
    let overhead: f64 = particles
        .iter()
        .filter(|p| {
            (p.position.x - edge_mid.x).abs() < span && (p.position.y - edge_mid.y).abs() < span
        })
        .map(|p| p.mass)
        .sum();
    let surcharge = overhead * GRAVITY_M_S2 / surcharge_area;

    let engagement = ToolEngagement {
        width: model.shovel.width,
        depth: depth_mid,
        rake_angle: rake.min(std::f64::consts::PI - m.friction_angle - 1e-3),
        surcharge,
    };
    // Shear failure gate: the position-driven edge always supplies the
    // Mohr-Coulomb threshold stress when the wedge geometry is valid, so an
    // invalid wedge is the only thing that stops the cut.
    let Ok(force) = soil::fee_force(&engagement, &m, GRAVITY_M_S2) else {
        return;
    };

    // Rasterize the swept quad between the previous and current edge.
    let res = grid.resolution();
    let edge_len = (edges.cutting[1] - edges.cutting[0]).norm();
    let n_span = ((edge_len / (res / 2.0)).ceil() as usize).max(1);
    let n_sweep = ((sweep.norm() / (res / 2.0)).ceil() as usize).max(1);
    let mut footprint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for si in 0..=n_sweep {
        let s = si as f64 / n_sweep as f64;
        let a = prev_cutting_edge[0].coords.lerp(&edges.cutting[0].coords, s);
        let b = prev_cutting_edge[1].coords.lerp(&edges.cutting[1].coords, s);
        for ti in 0..=n_span {
            let t = ti as f64 / n_span as f64;
            let p = a.lerp(&b, t);
            if let Some((i, j)) = grid.cell_at(p.x, p.y) {
                let d = grid.column_height(i, j) - p.z;
                if d > 0.0 {
                    let entry = footprint.entry((i, j)).or_insert(0.0);
                    *entry = entry.max(d);
                }
            }
        }
    }
    if footprint.is_empty() {
        return;
    }

    let mut removed: Vec<(MatId, f64)> = Vec::new();
    for (&(i, j), &d) in &footprint {
        let cut = grid.remove_depth(i, j, d);
        for (mat, mass) in cut.removed {
            match removed.iter_mut().find(|(mm, _)| *mm == mat) {
                Some((_, acc)) => *acc += mass,
                None => removed.push((mat, mass)),
            }
        }
    }

    // Fill the bucket, overflow to particles.
    for (mat, mass) in removed {
        let mm = grid.material(mat).clone();
        let capacity_mass = model.shovel.capacity * mm.density / mm.swell_factor;
        let space = (capacity_mass - state.bucket_mass).max(0.0);
        let taken = mass.min(space);
        if taken > 0.0 {
            state.bucket_mass += taken;
            state.bucket_material = Some(mat);
        }
        let overflow = mass - taken;
        if overflow > 0.0 {
            particles.extend(terrain::spawn_particles(
                overflow,
                mat,
                mm.density,
                mm.swell_factor,
                edge_mid.coords + Vector3::new(0.0, 0.0, 0.1),
                model.shovel.width / 2.0,
                sweep / dt * 0.3,
                rng,
            ));
        }
    }

    // Separation force opposes the edge motion; map it into joint efforts.
    if motion_h.norm() > 1e-9 {
        let drag = -force * motion_h.normalize();
        let edge_local = nalgebra::center(
            &model.shovel.cutting_edge[0],
            &model.shovel.cutting_edge[1],
        );
        let jac = point_jacobian(model, &state.joint_angles, Link::Bucket, &edge_local);
        // Drag is expressed in world axes; bring it into the base frame the
        // Jacobian lives in.
        let base_rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -state.heading);
        let f_base = base_rot * drag;
        for k in 0..4 {
            let col = jac.column(k);
            state.joint_efforts[k] += col.dot(&f_base);
        }
    }
    state.dig_resistance = force;
}
