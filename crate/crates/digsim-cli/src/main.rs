//! Command-line front end: scenario replay, validation, and trajectory
//! evaluation.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 runtime error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use digsim::engine::{self, EngineError};
use digsim::eval;
use digsim::excavator::ActuationMode;

#[derive(Parser)]
#[command(name = "digsim", version, about = "Deterministic excavator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a command log against a scenario and write the state log.
    Run(RunArgs),
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Trajectory metrics over state logs or CSV trajectories.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario YAML.
    #[arg(long)]
    scenario: PathBuf,
    /// JSONL command log to replay.
    #[arg(long)]
    commands: PathBuf,
    /// Output JSONL state log.
    #[arg(long)]
    out: PathBuf,
    /// Optional DEM (ESRI ASCII grid) of the final terrain.
    #[arg(long)]
    dem_out: Option<PathBuf>,
    /// Simulated seconds to run.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario timestep, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Joint actuation mode.
    #[arg(long, value_enum, default_value_t = Mode::Parameterized)]
    mode: Mode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ideal,
    Parameterized,
}

impl From<Mode> for ActuationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ideal => ActuationMode::Ideal,
            Mode::Parameterized => ActuationMode::Parameterized,
        }
    }
}

#[derive(Subcommand)]
enum EvalCommand {
    /// RMSE between a reference and a test trajectory.
    Rmse {
        /// Reference trajectory (state log or CSV).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Test trajectory (state log or CSV).
        #[arg(long)]
        test: PathBuf,
        /// Resampling grid size.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Align by normalized arc length instead of time.
        #[arg(long)]
        arc_length: bool,
        /// Excavator id when a state log holds several.
        #[arg(long)]
        excavator: Option<String>,
    },
    /// Total path length of a trajectory.
    Pathlen {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        excavator: Option<String>,
    },
    /// Velocity/acceleration series as CSV.
    Profile {
        #[arg(long)]
        traj: PathBuf,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        excavator: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { scenario } => validate(scenario),
        Command::Eval { command } => evaluate(command),
    };
    std::process::exit(code);
}

fn engine_exit(e: &EngineError) -> i32 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn eval_exit(e: &eval::EvalError) -> i32 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn run(args: RunArgs) -> i32 {
    let mut config = match engine::load_scenario_file(&args.scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return engine_exit(&e);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dt) = args.dt {
        if dt <= 0.0 {
            eprintln!("error: dt must be > 0");
            return 2;
        }
        config.dt = dt;
    }
    let commands = match engine::load_command_log(&args.commands) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return engine_exit(&e);
        }
    };
    let out = match File::create(&args.out) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot create `{}`: {e}", args.out.display());
            return 3;
        }
    };
    let mut writer = BufWriter::new(out);
    let (summary, world) = match engine::run(
        &config,
        args.mode.into(),
        &commands,
        args.duration,
        &mut writer,
    ) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return engine_exit(&e);
        }
    };
    if let Err(e) = writer.flush() {
        eprintln!("error: {e}");
        return 3;
    }
    if let Some(dem) = &args.dem_out {
        if let Err(e) = world.terrain().export_dem_path(dem) {
            eprintln!("error: {e}");
            return 3;
        }
    }
    println!(
        "steps {} sim {:.2} s wall {:.3} s realtime_factor {:.1} records {}",
        summary.steps,
        summary.sim_seconds,
        summary.wall_seconds,
        summary.realtime_factor,
        summary.records
    );
    0
}

fn validate(scenario: PathBuf) -> i32 {
    match engine::load_scenario_file(&scenario) {
        Ok(config) => {
            println!(
                "ok: {} excavator(s), {} material(s), terrain {:.1} x {:.1} m @ {:.2} m, dt {} s, seed {}",
                config.excavators.len(),
                config.materials.len(),
                config.terrain.width_m,
                config.terrain.length_m,
                config.terrain.resolution_m,
                config.dt,
                config.seed
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            engine_exit(&e)
        }
    }
}

fn load_traj(
    path: &std::path::Path,
    excavator: Option<&str>,
    origin: Option<digsim::geo::GeodeticCoord>,
) -> Result<(eval::Trajectory, Option<digsim::geo::GeodeticCoord>), i32> {
    eval::load_trajectory(path, excavator, origin).map_err(|e| {
        eprintln!("error: {e}");
        eval_exit(&e)
    })
}

fn evaluate(command: EvalCommand) -> i32 {
    match command {
        EvalCommand::Rmse {
            reference,
            test,
            samples,
            arc_length,
            excavator,
        } => {
            // Both geodetic inputs share the reference's ENU origin.
            let (a, origin) = match load_traj(&reference, excavator.as_deref(), None) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let (b, _) = match load_traj(&test, excavator.as_deref(), origin) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let result = if arc_length {
                eval::rmse_arclength(&a, &b, samples)
            } else {
                eval::rmse(&a, &b, samples)
            };
            match result {
                Ok(v) => {
                    println!("{v:.9}");
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    eval_exit(&e)
                }
            }
        }
        EvalCommand::Pathlen { traj, excavator } => {
            match load_traj(&traj, excavator.as_deref(), None) {
                Ok((t, _)) => {
                    println!("{:.9}", eval::path_length(&t));
                    0
                }
                Err(code) => code,
            }
        }
        EvalCommand::Profile {
            traj,
            out,
            excavator,
        } => {
            let (t, _) = match load_traj(&traj, excavator.as_deref(), None) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let rows = eval::motion_profile(&t);
            let mut text = String::from("t,speed_m_s,accel_m_s2\n");
            for row in rows {
                text.push_str(&format!("{:.9},{:.9},{:.9}\n", row.t, row.speed, row.accel));
            }
            match out {
                Some(path) => match std::fs::write(&path, text) {
                    Ok(()) => 0,
                    Err(e) => {
                        eprintln!("error: cannot write `{}`: {e}", path.display());
                        3
                    }
                },
                None => {
                    print!("{text}");
                    0
                }
            }
        }
    }
}
