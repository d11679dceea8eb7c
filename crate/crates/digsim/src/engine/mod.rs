//! The simulator spine: scenario-driven world construction, the
//! deterministic fixed-timestep loop, command replay, and state logging.
//!
//! One thread owns all mutable state. Excavators step in ascending id order,
//! then particles advance once globally, then every sensor due this tick
//! samples the new state; records sort by (timestamp, excavator, topic)
//! before they hit the log, so a run is a pure function of (scenario, seed,
//! command log) down to the byte.

pub mod control;
pub mod record;
pub mod scenario;

use std::io::{self, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use control::{load_command_log, parse_command_log, write_command_log, ControlFrame};
pub use scenario::{load_scenario, load_scenario_file, ExcavatorConfig, ScenarioConfig};

use crate::excavator::{
    bucket_sweep, shovel_edges_world, step_joints, step_tracks, ActuationMode, ControlChannels,
    ExcavatorModel, ExcavatorState, Joint,
};
use crate::sensors::{SensorContext, SensorInstance};
use crate::soil::SoilError;
use crate::terrain::{self, SoilParticle, TerrainError, TerrainGrid};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("duplicate excavator id `{0}`")]
    DuplicateExcavatorId(String),
    #[error("duplicate sensor topic `{topic}` on excavator `{excavator}`")]
    DuplicateTopic { excavator: String, topic: String },
    #[error("excavator `{id}`: unknown type `{kind}` (expected `excavator`)")]
    UnknownExcavatorType { id: String, kind: String },
    #[error("sensor `{sensor}`: unknown mount link `{location}`")]
    UnknownLink { sensor: String, location: String },
    #[error("`{owner}`: field `{field}` expects {expected} values, got {got}")]
    FieldArity {
        owner: String,
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("excavator `{id}`: spawn ({x:.2}, {y:.2}) outside terrain bounds")]
    SpawnOutOfBounds { id: String, x: f64, y: f64 },
    #[error("command log: {0}")]
    CommandLog(String),
    #[error("command log references unknown excavator `{0}`")]
    UnknownCommandTarget(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Soil(#[from] SoilError),
    #[error("I/O on `{path}`: {source}")]
    Io { path: String, source: io::Error },
    #[error("write error: {0}")]
    Write(#[from] io::Error),
}

impl EngineError {
    /// True for errors caused by bad configuration or inputs (CLI exit code
    /// 2) as opposed to runtime failures (exit code 3).
    pub fn is_config(&self) -> bool {
        !matches!(self, EngineError::Io { .. } | EngineError::Write(_))
    }
}

struct SimExcavator {
    id: String,
    model: ExcavatorModel,
    state: ExcavatorState,
    sensors: Vec<SensorInstance>,
    frames: Vec<ControlFrame>,
    cursor: usize,
    current: ControlChannels,
}

/// Run statistics reported after a replay.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub sim_seconds: f64,
    pub wall_seconds: f64,
    pub realtime_factor: f64,
    pub records: u64,
}

/// The complete mutable simulation state.
pub struct World {
    dt: f64,
    mode: ActuationMode,
    step_index: u64,
    terrain: TerrainGrid,
    particles: Vec<SoilParticle>,
    excavators: Vec<SimExcavator>,
    terrain_rng: ChaCha8Rng,
    records_written: u64,
}

impl World {
    pub fn new(config: &ScenarioConfig, mode: ActuationMode) -> Result<Self, EngineError> {
        let terrain = TerrainGrid::new(&config.terrain, &config.materials)?;
        let mut excavators = Vec::with_capacity(config.excavators.len());
        for e in &config.excavators {
            let mut state = ExcavatorState::new(e.offset, e.yaw);
            state.dig_phase_start = [0.0; 4];
            let sensors = e
                .sensors
                .iter()
                .map(|spec| SensorInstance::new(spec.clone(), config.seed, &e.id))
                .collect();
            excavators.push(SimExcavator {
                id: e.id.clone(),
                model: e.model.clone(),
                state,
                sensors,
                frames: Vec::new(),
                cursor: 0,
                current: ControlChannels::default(),
            });
        }
        // Deterministic stepping order regardless of declaration order.
        excavators.sort_by(|a, b| a.id.cmp(&b.id));
        // The terrain/particle stream is separate from every sensor stream.
        let terrain_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7465_7272_6169_6e00);
        Ok(Self {
            dt: config.dt,
            mode,
            step_index: 0,
            terrain,
            particles: Vec::new(),
            excavators,
            terrain_rng,
            records_written: 0,
        })
    }

    /// Attach a replayed command log. Frames must belong to known excavators.
    pub fn attach_commands(&mut self, frames: &[ControlFrame]) -> Result<(), EngineError> {
        for frame in frames {
            let Some(exc) = self.excavators.iter_mut().find(|e| e.id == frame.excavator_id)
            else {
                return Err(EngineError::UnknownCommandTarget(frame.excavator_id.clone()));
            };
            exc.frames.push(frame.clone());
        }
        for exc in &mut self.excavators {
            exc.frames
                .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn terrain(&self) -> &TerrainGrid {
        &self.terrain
    }

    pub fn particles(&self) -> &[SoilParticle] {
        &self.particles
    }

    pub fn excavator_state(&self, id: &str) -> Option<&ExcavatorState> {
        self.excavators
            .iter()
            .find(|e| e.id == id)
            .map(|e| &e.state)
    }

    pub fn records_written(&self) -> u64 {
        self.records_written
    }

    /// Conservation audit: terrain + airborne particles + bucket payloads.
    pub fn total_mass(&self) -> f64 {
        terrain::total_mass(&self.terrain, &self.particles)
            + self
                .excavators
                .iter()
                .map(|e| e.state.bucket_mass)
                .sum::<f64>()
    }

    /// Emit the t = 0 samples for every sensor (state as spawned).
    pub fn sample_initial<W: Write>(&mut self, out: &mut W) -> Result<(), EngineError> {
        self.emit_due_samples(0.0, out)
    }

    /// Advance the world one fixed timestep, appending due records to `out`.
    pub fn step<W: Write>(&mut self, out: &mut W) -> Result<(), EngineError> {
        let t_now = self.time();
        let t_next = (self.step_index + 1) as f64 * self.dt;
        for exc in &mut self.excavators {
            // Zero-order hold: latest frame at or before the tick start.
            while exc.cursor < exc.frames.len()
                && exc.frames[exc.cursor].timestamp <= t_now + 1e-9
            {
                exc.current = exc.frames[exc.cursor].channels;
                exc.cursor += 1;
            }
            let prev_edge = shovel_edges_world(&exc.model, &exc.state).cutting;
            step_joints(&mut exc.state, &exc.model, &exc.current, self.dt, self.mode);
            step_tracks(
                &mut exc.state,
                &exc.model,
                &exc.current,
                &mut self.terrain,
                &mut self.particles,
                &mut self.terrain_rng,
                self.dt,
            );
            bucket_sweep(
                &mut exc.state,
                &exc.model,
                &mut self.terrain,
                &mut self.particles,
                &mut self.terrain_rng,
                self.dt,
                &prev_edge,
            );
            exc.state.time = t_next;
        }
        terrain::step_particles(&mut self.terrain, &mut self.particles, self.dt);
        self.step_index += 1;
        self.emit_due_samples(t_next, out)
    }

    /// Sample every sensor whose clock is due by `t_limit`, in strict
    /// (timestamp, excavator, topic) order.
    fn emit_due_samples<W: Write>(&mut self, t_limit: f64, out: &mut W) -> Result<(), EngineError> {
        let mut batch: Vec<(f64, usize, String, crate::sensors::SamplePayload)> = Vec::new();
        for (idx, exc) in self.excavators.iter_mut().enumerate() {
            let ctx = SensorContext {
                model: &exc.model,
                state: &exc.state,
                terrain: &self.terrain,
            };
            for sensor in &mut exc.sensors {
                while let Some(t) = sensor.pop_due(t_limit) {
                    let payload = sensor.sample(t, &ctx);
                    let topic = format!("/{}{}", exc.id, sensor.spec.topic);
                    batch.push((t, idx, topic, payload));
                }
            }
        }
        batch.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        for (t, idx, topic, payload) in batch {
            record::write_record(out, t, &self.excavators[idx].id, &topic, &payload)?;
            self.records_written += 1;
        }
        Ok(())
    }
}

/// Replay a command log against a scenario for `duration` seconds.
///
/// Executes floor(duration / dt) steps, streaming records to `out`, and
/// returns the run statistics together with the final world for inspection
/// (DEM export, mass audits). A zero duration produces an empty log.
pub fn run<W: Write>(
    config: &ScenarioConfig,
    mode: ActuationMode,
    commands: &[ControlFrame],
    duration: f64,
    out: &mut W,
) -> Result<(RunSummary, World), EngineError> {
    let mut world = World::new(config, mode)?;
    world.attach_commands(commands)?;
    let steps = (duration / config.dt).floor().max(0.0) as u64;
    let start = Instant::now();
    if steps > 0 {
        world.sample_initial(out)?;
        for _ in 0..steps {
            world.step(out)?;
        }
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    let sim_seconds = steps as f64 * config.dt;
    Ok((
        RunSummary {
            steps,
            sim_seconds,
            wall_seconds,
            realtime_factor: if wall_seconds > 0.0 {
                sim_seconds / wall_seconds
            } else {
                f64::INFINITY
            },
            records: world.records_written,
        },
        world,
    ))
}

/// Convenience: which joints a control frame drives, for scripting tests.
pub fn joint_channel(frame: &mut ControlChannels, joint: Joint, value: f64) {
    match joint {
        Joint::Slew => frame.slew = value,
        Joint::Boom => frame.boom = value,
        Joint::Arm => frame.arm = value,
        Joint::Bucket => frame.bucket = value,
    }
}
