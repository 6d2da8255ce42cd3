//! `hydrofit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (I/O, parse,
//! validation), 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cmaes::default_population_size;
use crate::dynamics::{simulate, DEFAULT_DT};
use crate::error::{CmaError, ConfigError, IdentError, SimError, TrajectoryError};
use crate::identify::{
    run_identification, synth_target, uniform_sample_times, CoeffsFile, IdentConfig, DEFAULT_MAX_EVALS,
    DEFAULT_SIGMA0,
};
use crate::loss::{normalized_endpoint_error, per_keypoint_mean_errors, trajectory_mse};
use crate::model::MechanismModel;
use crate::trajectory::{load_trajectory, save_trajectory, Calibration, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const SCHEMAS: &str = "\
File formats:
  model JSON     {schema_version: 1, base_pose: {x, y, theta}, links: [{length, com_offset, mass,
                 inertia_com, semi_axes: [rx, ry, rz], overlap_radius}], joints: [{damping,
                 friction_loss, limits: null | [lo, hi]}], actuators: [{joint_index, kind:
                 \"none\" | \"velocity_servo\", kv, force_range: [lo, hi], schedule: [{t_start,
                 t_end, v_ref}]}], fluid: {density, viscosity, gravity}, initial_state: {q, qdot}}
  coeffs JSON    {per_link_coeffs: [{blunt_drag, slender_drag, angular_drag, kutta_lift,
                 magnus_lift}], joint_params (optional): [{damping, friction_loss}]}
                 identify result files are accepted as coeffs files
  trajectory CSV header t,P0x,P0y,P1x,P1y,...; one row per sample, times strictly increasing;
                 meters, or pixels when a calibration is given
  calib JSON     {meters_per_pixel, origin_px: [u, v], flip_y}
  result JSON    {schema_version, best_x, per_link_coeffs, best_loss, normalized_error,
                 eval_count, stop_reason, wall_time_s}
  history CSV    generation,evals,best,median
  score JSON     {mse, normalized_error, per_keypoint_mean_errors, system_length}

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.";

#[derive(Debug, Parser)]
#[command(
    name = "hydrofit",
    version,
    about = "Simulate planar underwater chains and identify per-link hydrodynamic coefficients",
    after_help = SCHEMAS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a model and write keypoint samples.
    #[command(after_help = SCHEMAS)]
    Simulate(SimulateArgs),
    /// Fit hydrodynamic coefficients to a recorded trajectory.
    #[command(after_help = SCHEMAS)]
    Identify(IdentifyArgs),
    /// Score a coefficient set against a recorded trajectory.
    #[command(after_help = SCHEMAS)]
    Evaluate(EvaluateArgs),
    /// Generate a synthetic target trajectory with optional noise.
    #[command(after_help = SCHEMAS)]
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Mechanism model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Coefficient JSON.
    #[arg(long)]
    coeffs: PathBuf,
    /// Simulated time span in seconds.
    #[arg(long)]
    duration: f64,
    /// Integration step in seconds.
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Keypoint sampling rate in Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    /// Mechanism model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Target trajectory CSV.
    #[arg(long)]
    target: PathBuf,
    /// Pixel-to-world calibration JSON for the target.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Evaluation budget, counting the start point.
    #[arg(long, default_value_t = DEFAULT_MAX_EVALS)]
    max_evals: usize,
    /// Initial step size as a fraction of each parameter's range.
    #[arg(long, default_value_t = DEFAULT_SIGMA0)]
    sigma0: f64,
    /// Population size [default: 4 + floor(3 ln D)].
    #[arg(long)]
    lambda: Option<usize>,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel evaluation workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Integration step in seconds.
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Output result JSON.
    #[arg(long)]
    out: PathBuf,
    /// Output per-generation loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also fit per-joint damping and friction loss.
    #[arg(long)]
    include_joint_params: bool,
    /// Keypoints entering the loss, e.g. P1,P2,P3 [default: all target columns].
    #[arg(long, value_delimiter = ',')]
    loss_keypoints: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Mechanism model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Coefficient JSON or identify result JSON.
    #[arg(long)]
    coeffs: PathBuf,
    /// Target trajectory CSV.
    #[arg(long)]
    target: PathBuf,
    /// Pixel-to-world calibration JSON for the target.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Integration step in seconds.
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Output score JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Mechanism model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Generating coefficient JSON.
    #[arg(long)]
    coeffs: PathBuf,
    /// Simulated time span in seconds.
    #[arg(long)]
    duration: f64,
    /// Keypoint sampling rate in Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// Gaussian noise standard deviation per coordinate, in meters.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidInput(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<IdentError> for CliError {
    fn from(e: IdentError) -> Self {
        match e {
            IdentError::Sim(s) => s.into(),
            IdentError::Cma(CmaError::Config(m)) => CliError::Usage(m),
            IdentError::Cma(CmaError::EigenFailure(_) | CmaError::NonFiniteFitness { .. }) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<MechanismModel, CliError> {
    Ok(MechanismModel::load_validated(path)?)
}

fn load_target(path: &Path, calib: Option<&Path>) -> Result<Trajectory, CliError> {
    let cal = calib.map(Calibration::load).transpose()?;
    Ok(load_trajectory(path, cal.as_ref())?)
}

fn write_json(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, format!("{text}\n")).map_err(|e| io_error(path, e))
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

fn check_duration(v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--duration must be non-negative, got {v}")))
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    check_duration(a.duration)?;
    check_positive("dt", a.dt)?;
    check_positive("rate", a.rate)?;
    let model = load_model(&a.model)?;
    let (model, coeffs) = CoeffsFile::load(&a.coeffs)?.apply(&model)?;
    let times = uniform_sample_times(a.duration, a.rate);
    let traj = simulate(&model, &coeffs, a.duration, a.dt, &times)?;
    save_trajectory(&traj, &a.out)?;
    Ok(())
}

fn cmd_identify(a: IdentifyArgs) -> Result<(), CliError> {
    check_positive("sigma0", a.sigma0)?;
    check_positive("dt", a.dt)?;
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let target = load_target(&a.target, a.calib.as_deref())?;
    let mut config = IdentConfig::new(model, target, a.include_joint_params);
    config.cma.sigma0 = a.sigma0;
    config.cma.seed = a.seed;
    config.cma.max_evals = a.max_evals;
    config.cma.lambda = a.lambda.unwrap_or_else(|| default_population_size(config.dim()));
    config.dt = a.dt;
    config.loss_keypoints = a.loss_keypoints;

    let result = run_identification(&config, a.workers)?;
    write_json(&a.out, &result.to_json())?;
    if let Some(path) = &a.history {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        result
            .write_history_csv(BufWriter::new(file))
            .map_err(|e| io_error(path, e))?;
    }
    println!(
        "best_loss={:.6e} normalized_error={} evals={} stop={}",
        result.best_loss,
        result
            .normalized_error
            .map_or_else(|| "n/a".to_string(), |e| format!("{e:.6}")),
        result.eval_count,
        result.stop_reason.as_str()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Score {
    mse: f64,
    normalized_error: f64,
    per_keypoint_mean_errors: Vec<f64>,
    system_length: f64,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    check_positive("dt", a.dt)?;
    let model = load_model(&a.model)?;
    let (model, coeffs) = CoeffsFile::load(&a.coeffs)?.apply(&model)?;
    let target = load_target(&a.target, a.calib.as_deref())?;
    if target.start_time() < 0.0 {
        return Err(CliError::Data("target timestamps must be non-negative".into()));
    }
    let sim = simulate(&model, &coeffs, target.end_time(), a.dt, target.times())?;
    let sim = sim.select(target.labels())?;
    let data = |e: crate::error::LossError| CliError::Data(e.to_string());
    let score = Score {
        mse: trajectory_mse(&sim, &target).map_err(data)?,
        normalized_error: normalized_endpoint_error(&sim, &target, model.system_length()).map_err(data)?,
        per_keypoint_mean_errors: per_keypoint_mean_errors(&sim, &target).map_err(data)?,
        system_length: model.system_length(),
    };
    write_json(&a.out, &serde_json::to_string_pretty(&score).expect("score serializes"))?;
    println!("normalized_error={:.6} mse={:.6e}", score.normalized_error, score.mse);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    check_duration(a.duration)?;
    check_positive("rate", a.rate)?;
    if !(a.noise_std >= 0.0 && a.noise_std.is_finite()) {
        return Err(CliError::Usage(format!("--noise-std must be non-negative, got {}", a.noise_std)));
    }
    let model = load_model(&a.model)?;
    let (model, coeffs) = CoeffsFile::load(&a.coeffs)?.apply(&model)?;
    let traj = synth_target(&model, &coeffs, a.duration, a.rate, a.noise_std, a.seed)?;
    save_trajectory(&traj, &a.out)?;
    Ok(())
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Diagnostics go to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("hydrofit: {}", e.message());
            e.code()
        }
    }
}
