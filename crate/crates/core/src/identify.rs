//! Closed identification loop: candidate, parameterized model, simulation,
//! trajectory loss, distribution update.
//!
//! The optimizer works in box-normalized coordinates `u = (x − lo) / (hi − lo)`
//! so a single step size suits coefficients and joint parameters whose ranges
//! differ by orders of magnitude. Candidates are evaluated at `x` rounded to
//! 12 significant digits; the same rounded vector keys the evaluation cache,
//! so cached and fresh losses agree bitwise.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cmaes::{CmaConfig, CmaState, StopReason};
use crate::dynamics::{simulate_with, SimSettings, DEFAULT_DT, DEFAULT_KEYPOINT_FRACTIONS};
use crate::error::{ConfigError, IdentError, SimError};
use crate::loss::{normalized_endpoint_error, trajectory_mse, DIVERGED_LOSS};
use crate::model::{HydroCoeffs, MechanismModel, ParamVector, COEFFS_PER_LINK, DEFAULT_COEFF_BOUNDS};
use crate::trajectory::{keypoint_labels, Trajectory};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Initial step size as a fraction of each coordinate's range.
pub const DEFAULT_SIGMA0: f64 = 0.2;

/// Default evaluation budget.
pub const DEFAULT_MAX_EVALS: usize = 5000;

/// Search box for joint damping (N·m·s/rad) and friction loss (N·m).
pub const JOINT_PARAM_BOUNDS: (f64, f64) = (0.0, 1e-3);

/// Significant decimal digits kept when quantizing a candidate.
pub const QUANTIZATION_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub damping: f64,
    pub friction_loss: f64,
}

/// Identification problem.
///
/// `cma.x0`, `cma.bounds_lo` and `cma.bounds_hi` are physical values laid out
/// as five coefficients per link, followed by `(damping, friction_loss)` per
/// joint when `include_joint_params` is set. `cma.sigma0` is a fraction of
/// each coordinate's range.
#[derive(Debug, Clone)]
pub struct IdentConfig {
    pub model: MechanismModel,
    pub target: Trajectory,
    pub cma: CmaConfig,
    /// Keypoint labels entering the loss; `None` uses every target column.
    pub loss_keypoints: Option<Vec<String>>,
    pub dt: f64,
    pub include_joint_params: bool,
}

impl IdentConfig {
    /// Default start, bounds and budget for `model`.
    pub fn new(model: MechanismModel, target: Trajectory, include_joint_params: bool) -> Self {
        let n = model.n_links();
        let pv = ParamVector::default_x0(n);
        let mut x0 = pv.values().to_vec();
        let mut lo = pv.lower().to_vec();
        let mut hi = pv.upper().to_vec();
        if include_joint_params {
            for j in &model.joints {
                for v in [j.damping, j.friction_loss] {
                    x0.push(v.clamp(JOINT_PARAM_BOUNDS.0, JOINT_PARAM_BOUNDS.1));
                    lo.push(JOINT_PARAM_BOUNDS.0);
                    hi.push(JOINT_PARAM_BOUNDS.1);
                }
            }
        }
        let mut cma = CmaConfig::new(x0, DEFAULT_SIGMA0, lo, hi);
        cma.max_evals = DEFAULT_MAX_EVALS;
        Self {
            model,
            target,
            cma,
            loss_keypoints: None,
            dt: DEFAULT_DT,
            include_joint_params,
        }
    }

    pub fn dim(&self) -> usize {
        let n = self.model.n_links();
        COEFFS_PER_LINK * n + if self.include_joint_params { 2 * n } else { 0 }
    }
}

/// Rounds to [`QUANTIZATION_DIGITS`] significant digits; `-0.0` becomes `0.0`.
pub fn quantize(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let q: f64 = format!("{:.*e}", QUANTIZATION_DIGITS - 1, x).parse().expect("formatted float parses");
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// Memoized losses keyed on the bit patterns of quantized candidates.
#[derive(Debug, Default)]
pub struct EvalCache {
    map: RwLock<HashMap<Vec<u64>, f64>>,
    simulations: AtomicUsize,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of simulations run through this cache.
    pub fn simulations(&self) -> usize {
        self.simulations.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Validated, read-only view of an [`IdentConfig`] that maps candidates to
/// losses.
#[derive(Debug, Clone)]
pub struct Objective {
    model: MechanismModel,
    target: Trajectory,
    labels: Vec<String>,
    settings: SimSettings,
    duration: f64,
    include_joint_params: bool,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Objective {
    pub fn new(config: &IdentConfig) -> Result<Self, IdentError> {
        config.model.ensure_valid()?;
        let dim = config.dim();
        if config.cma.dim() != dim {
            return Err(IdentError::Config(format!(
                "parameter vector has {} entries, model needs {dim}",
                config.cma.dim()
            )));
        }
        config.cma.validate()?;
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(IdentError::Config(format!("dt must be positive, got {}", config.dt)));
        }
        let available = keypoint_labels(DEFAULT_KEYPOINT_FRACTIONS.len());
        let labels = match &config.loss_keypoints {
            Some(l) if l.is_empty() => return Err(IdentError::Config("empty keypoint selection".into())),
            Some(l) => l.clone(),
            None => config.target.labels().to_vec(),
        };
        if let Some(bad) = labels.iter().find(|l| !available.contains(l)) {
            return Err(IdentError::Config(format!(
                "keypoint '{bad}' is not simulated (available: {})",
                available.join(",")
            )));
        }
        let target = config.target.select(&labels)?;
        if target.start_time() < 0.0 {
            return Err(IdentError::Config("target timestamps must be non-negative".into()));
        }
        Ok(Self {
            model: config.model.clone(),
            duration: target.end_time(),
            target,
            labels,
            settings: SimSettings {
                dt: config.dt,
                ..SimSettings::default()
            },
            include_joint_params: config.include_joint_params,
            lower: config.cma.bounds_lo.clone(),
            upper: config.cma.bounds_hi.clone(),
        })
    }

    pub fn target(&self) -> &Trajectory {
        &self.target
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Model and coefficients encoded by `x`.
    pub fn parameterize(&self, x: &[f64]) -> Result<(Cow<'_, MechanismModel>, ParamVector), IdentError> {
        if x.len() != self.dim() {
            return Err(IdentError::Config(format!(
                "candidate has {} entries, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let nc = COEFFS_PER_LINK * self.model.n_links();
        let coeffs = ParamVector::new(x[..nc].to_vec(), self.lower[..nc].to_vec(), self.upper[..nc].to_vec())?;
        if !self.include_joint_params {
            return Ok((Cow::Borrowed(&self.model), coeffs));
        }
        let mut model = self.model.clone();
        for (j, p) in model.joints.iter_mut().zip(x[nc..].chunks_exact(2)) {
            j.damping = p[0];
            j.friction_loss = p[1];
        }
        Ok((Cow::Owned(model), coeffs))
    }

    /// Simulated keypoints for `x` on the target's time grid.
    pub fn simulate(&self, x: &[f64]) -> Result<Result<Trajectory, SimError>, IdentError> {
        let (model, coeffs) = self.parameterize(x)?;
        let sim = simulate_with(&model, &coeffs, self.duration, &self.settings, self.target.times());
        Ok(sim.map(|t| t.select(&self.labels).expect("simulated labels cover the selection")))
    }

    /// Loss of `x` as given (no quantization, no cache).
    pub fn loss(&self, x: &[f64]) -> Result<f64, IdentError> {
        match self.simulate(x)? {
            Ok(sim) => Ok(trajectory_mse(&sim, &self.target)?),
            Err(SimError::InvalidInput(m)) => Err(IdentError::Config(m)),
            Err(_) => Ok(DIVERGED_LOSS),
        }
    }

    /// Loss of quantized `x`, served from `cache` when possible.
    pub fn cached_loss(&self, x: &[f64], cache: &EvalCache) -> Result<f64, IdentError> {
        let xq: Vec<f64> = x.iter().map(|&v| quantize(v)).collect();
        let key: Vec<u64> = xq.iter().map(|v| v.to_bits()).collect();
        if let Some(&l) = cache.map.read().expect("cache lock").get(&key) {
            return Ok(l);
        }
        cache.simulations.fetch_add(1, Ordering::Relaxed);
        let l = self.loss(&xq)?;
        cache.map.write().expect("cache lock").insert(key, l);
        Ok(l)
    }

    /// Normalized keypoint error of `x` against the target, `None` if the
    /// simulation fails.
    pub fn normalized_error(&self, x: &[f64]) -> Result<Option<f64>, IdentError> {
        Ok(match self.simulate(x)? {
            Ok(sim) => Some(normalized_endpoint_error(&sim, &self.target, self.model.system_length())?),
            Err(_) => None,
        })
    }
}

/// Loss of quantized `x` for `config`, without caching.
pub fn evaluate_candidate(config: &IdentConfig, x: &[f64]) -> Result<f64, IdentError> {
    let obj = Objective::new(config)?;
    let xq: Vec<f64> = x.iter().map(|&v| quantize(v)).collect();
    obj.loss(&xq)
}

pub fn cached_evaluate(objective: &Objective, x: &[f64], cache: &EvalCache) -> Result<f64, IdentError> {
    objective.cached_loss(x, cache)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    /// Evaluations so far, including the start point.
    pub evals: usize,
    /// Best penalized loss seen so far.
    pub best: f64,
    /// Median penalized loss of this generation.
    pub median: f64,
}

#[derive(Debug, Clone)]
pub struct IdentResult {
    pub best_x: ParamVector,
    pub joint_params: Option<Vec<JointParams>>,
    /// Unpenalized loss at `best_x`, m².
    pub best_loss: f64,
    pub normalized_error: Option<f64>,
    pub loss_history: Vec<HistoryRow>,
    pub eval_count: usize,
    pub simulations: usize,
    pub stop_reason: StopReason,
    pub wall_time_s: f64,
}

impl IdentResult {
    /// Full optimized vector, coefficients then joint parameters.
    pub fn best_vector(&self) -> Vec<f64> {
        let mut v = self.best_x.values().to_vec();
        for p in self.joint_params.iter().flatten() {
            v.extend([p.damping, p.friction_loss]);
        }
        v
    }

    pub fn coeffs_file(&self) -> CoeffsFile {
        CoeffsFile {
            per_link_coeffs: self.best_x.links().collect(),
            joint_params: self.joint_params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = ResultFile {
            schema_version: RESULT_SCHEMA_VERSION,
            best_x: self.best_vector(),
            per_link_coeffs: self.best_x.links().collect(),
            joint_params: self.joint_params.clone(),
            best_loss: self.best_loss,
            normalized_error: self.normalized_error,
            eval_count: self.eval_count,
            stop_reason: self.stop_reason.as_str().to_string(),
            wall_time_s: self.wall_time_s,
        };
        serde_json::to_string_pretty(&file).expect("result serializes")
    }

    /// `generation,evals,best,median` with a header row.
    pub fn write_history_csv(&self, writer: impl std::io::Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.loss_history {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResultFile {
    schema_version: u32,
    best_x: Vec<f64>,
    per_link_coeffs: Vec<HydroCoeffs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    joint_params: Option<Vec<JointParams>>,
    best_loss: f64,
    normalized_error: Option<f64>,
    eval_count: usize,
    stop_reason: String,
    wall_time_s: f64,
}

/// Coefficient file read by `simulate`, `evaluate` and `synth`. Result files
/// from `identify` have the same fields and load as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffsFile {
    pub per_link_coeffs: Vec<HydroCoeffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_params: Option<Vec<JointParams>>,
}

impl CoeffsFile {
    pub fn from_params(coeffs: &ParamVector) -> Self {
        Self {
            per_link_coeffs: coeffs.links().collect(),
            joint_params: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("coefficients serialize");
        std::fs::write(path, text + "\n").map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Copy of `model` with the joint parameters applied, and the coefficient
    /// vector with the default box widened to contain it.
    pub fn apply(&self, model: &MechanismModel) -> Result<(MechanismModel, ParamVector), ConfigError> {
        let n = model.n_links();
        if self.per_link_coeffs.len() != n {
            return Err(ConfigError::InvalidParams(format!(
                "{} coefficient sets for {n} links",
                self.per_link_coeffs.len()
            )));
        }
        let mut model = model.clone();
        if let Some(jp) = &self.joint_params {
            if jp.len() != n {
                return Err(ConfigError::InvalidParams(format!("{} joint parameter sets for {n} joints", jp.len())));
            }
            for (j, p) in model.joints.iter_mut().zip(jp) {
                j.damping = p.damping;
                j.friction_loss = p.friction_loss;
            }
            model.ensure_valid()?;
        }
        let values: Vec<f64> = self.per_link_coeffs.iter().flat_map(|c| c.to_array()).collect();
        let lower = vec![DEFAULT_COEFF_BOUNDS.0; values.len()];
        let upper = values.iter().map(|v| v.max(DEFAULT_COEFF_BOUNDS.1)).collect();
        let pv = ParamVector::new(values, lower, upper)?;
        Ok((model, pv))
    }
}

/// Sample times `0, 1/rate, …` up to `duration`.
pub fn uniform_sample_times(duration: f64, sample_rate: f64) -> Vec<f64> {
    let n = (duration * sample_rate + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 / sample_rate).collect()
}

/// Synthetic target: simulated keypoints plus i.i.d. Gaussian noise of
/// `noise_std` meters on every coordinate.
pub fn synth_target(
    model: &MechanismModel,
    x_true: &ParamVector,
    duration: f64,
    sample_rate: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Trajectory, IdentError> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(IdentError::Config(format!("sample rate must be positive, got {sample_rate}")));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| IdentError::Config(format!("noise std must be non-negative, got {noise_std}")))?;
    let times = uniform_sample_times(duration, sample_rate);
    let clean = crate::dynamics::simulate(model, x_true, duration, DEFAULT_DT, &times)?;
    if noise_std == 0.0 {
        return Ok(clean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = clean
        .points()
        .iter()
        .map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();
    Ok(Trajectory::new(clean.times().to_vec(), clean.labels().to_vec(), points)?)
}

#[derive(Debug, Clone)]
struct Best {
    x: Vec<f64>,
    penalized: f64,
    loss: f64,
}

/// Stepwise identification run. [`run_identification`] drives one to
/// completion; interactive callers can step it a generation at a time.
pub struct IdentSession {
    objective: Objective,
    cache: EvalCache,
    cma: CmaState,
    lower: Vec<f64>,
    range: Vec<f64>,
    best: Best,
    history: Vec<HistoryRow>,
    stop: Option<StopReason>,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl IdentSession {
    /// Validates the config and evaluates the start point.
    pub fn new(config: &IdentConfig, workers: usize) -> Result<Self, IdentError> {
        if workers == 0 {
            return Err(IdentError::Config("at least one worker is required".into()));
        }
        let objective = Objective::new(config)?;
        let c = &config.cma;
        let lower = c.bounds_lo.clone();
        let range: Vec<f64> = c.bounds_lo.iter().zip(&c.bounds_hi).map(|(l, h)| h - l).collect();
        let d = c.dim();
        let u0 = (0..d).map(|i| ((c.x0[i] - lower[i]) / range[i]).clamp(0.0, 1.0)).collect();
        let mut unit = CmaConfig::new(u0, c.sigma0, vec![0.0; d], vec![1.0; d]);
        unit.lambda = c.lambda;
        unit.seed = c.seed;
        unit.max_evals = c.max_evals;
        unit.tol_fun = c.tol_fun;
        unit.tol_x = c.tol_x;
        let mut cma = CmaState::new(unit)?;

        let cache = EvalCache::new();
        let x0: Vec<f64> = c.x0.iter().map(|&v| quantize(v)).collect();
        let loss0 = objective.cached_loss(&x0, &cache)?;
        cma.add_evaluations(1);

        #[cfg(feature = "parallel")]
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| IdentError::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Self {
            objective,
            cache,
            cma,
            lower,
            range,
            best: Best {
                x: x0,
                penalized: loss0,
                loss: loss0,
            },
            history: Vec::new(),
            stop: None,
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    fn to_physical(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| quantize((self.lower[i] + ui * self.range[i]).clamp(self.lower[i], self.lower[i] + self.range[i])))
            .collect()
    }

    fn evaluate_all(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, IdentError> {
        let eval = |x: &Vec<f64>| self.objective.cached_loss(x, &self.cache);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| xs.par_iter().map(eval).collect());
        }
        xs.iter().map(eval).collect()
    }

    /// Runs one generation unless a stopping rule fires; returns the stop
    /// reason once the run is over.
    pub fn step(&mut self) -> Result<Option<StopReason>, IdentError> {
        if self.stop.is_some() {
            return Ok(self.stop);
        }
        if let Some(r) = self.cma.converged() {
            self.stop = Some(r);
            return Ok(self.stop);
        }
        let pop = self.cma.ask()?;
        let xs: Vec<Vec<f64>> = pop.repaired.iter().map(|u| self.to_physical(u)).collect();
        let losses = self.evaluate_all(&xs)?;
        let fitness: Vec<f64> = losses.iter().zip(&pop.penalties).map(|(l, p)| l + p).collect();
        for (k, &f) in fitness.iter().enumerate() {
            if f < self.best.penalized {
                self.best = Best {
                    x: xs[k].clone(),
                    penalized: f,
                    loss: losses[k],
                };
            }
        }
        self.cma.tell(&pop.raw, &fitness)?;
        self.history.push(HistoryRow {
            generation: self.cma.generation(),
            evals: self.cma.eval_count(),
            best: self.best.penalized,
            median: median(&fitness),
        });
        Ok(None)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn best_x(&self) -> &[f64] {
        &self.best.x
    }

    pub fn best_loss(&self) -> f64 {
        self.best.loss
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn eval_count(&self) -> usize {
        self.cma.eval_count()
    }

    pub fn simulations(&self) -> usize {
        self.cache.simulations()
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Current search mean in physical coordinates.
    pub fn mean(&self) -> Vec<f64> {
        self.to_physical(self.cma.mean())
    }

    /// Packages the best point; steps to completion first if needed.
    pub fn finish(mut self) -> Result<IdentResult, IdentError> {
        let stop_reason = loop {
            if let Some(r) = self.step()? {
                break r;
            }
        };
        let (model, best_x) = self.objective.parameterize(&self.best.x)?;
        let joint_params = self.objective.include_joint_params.then(|| {
            model
                .joints
                .iter()
                .map(|j| JointParams {
                    damping: j.damping,
                    friction_loss: j.friction_loss,
                })
                .collect()
        });
        let normalized_error = self.objective.normalized_error(&self.best.x)?;
        Ok(IdentResult {
            best_x,
            joint_params,
            best_loss: self.best.loss,
            normalized_error,
            loss_history: self.history,
            eval_count: self.cma.eval_count(),
            simulations: self.cache.simulations(),
            stop_reason,
            wall_time_s: 0.0,
        })
    }
}

/// Runs ask, evaluate, tell until a stopping rule fires.
pub fn run_identification(config: &IdentConfig, workers: usize) -> Result<IdentResult, IdentError> {
    let start = std::time::Instant::now();
    let mut result = IdentSession::new(config, workers)?.finish()?;
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}
