//! Deterministic excavator simulation on deformable terrain.
//!
//! The crate simulates one or more tracked excavators on a layered-column
//! soil grid: bucket/soil separation forces, pressure-driven sinkage and
//! track slip, time-varying joint velocity response, configurable sensors,
//! and fixed-timestep replay of recorded control logs. A run is a pure
//! function of (scenario, seed, command log): state logs come out
//! byte-identical across repeats.
//!
//! Modules:
//! - [`geo`]: WGS-84 geodetic / ECEF / ENU conversions for trajectory input.
//! - [`soil`]: terramechanics (separation force, shear failure, thrust, sinkage).
//! - [`terrain`]: the deformable layered-column grid and soil particles.
//! - [`excavator`]: kinematic chain, joint response, tracks, shovel.
//! - [`sensors`]: IMU, odometry, joint state, transform, bucket mass, range.
//! - [`engine`]: scenario loading, the stepping loop, command/state logs.
//! - [`eval`]: trajectory RMSE, path length, motion profiles.

// Validation uses `!(x > 0.0)` style comparisons so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod eval;
pub mod excavator;
pub mod geo;
pub mod sensors;
pub mod soil;
pub mod terrain;

/// Gravitational acceleration used throughout the simulation, m/s^2.
pub const GRAVITY_M_S2: f64 = 9.81;
