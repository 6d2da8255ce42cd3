//! Browser bindings: chain animation, fluid force curves and stepwise
//! identification against a synthetic target.

use hydrofit::dynamics::{forward_kinematics, Integrator, LinkFrame, Simulator, State, DEFAULT_DT};
use hydrofit::hydro::link_fluid_wrench;
use hydrofit::identify::{synth_target, IdentConfig, IdentSession};
use hydrofit::model::{FluidEnv, HydroCoeffs, ParamVector};
use hydrofit::scenarios::{self, Scenario};
use hydrofit::Trajectory;
use nalgebra::Vector2;
use wasm_bindgen::prelude::*;

/// Interleaves points as `[x0, y0, x1, y1, …]`.
fn flatten<'a>(points: impl IntoIterator<Item = &'a Vector2<f64>>) -> Vec<f64> {
    points.into_iter().flat_map(|p| [p.x, p.y]).collect()
}

fn scenario(name: &str) -> Result<Scenario, JsError> {
    scenarios::by_name(name).ok_or_else(|| JsError::new(&format!("unknown scenario '{name}'")))
}

/// Comma-separated scenario names.
#[wasm_bindgen]
pub fn scenario_names() -> String {
    scenarios::all().iter().map(|s| s.name).collect::<Vec<_>>().join(",")
}

/// Centerline frames of a scenario simulated with its reference coefficients
/// scaled by `coeff_scale`. Layout: `[points_per_frame, x, y, x, y, …]`, one
/// frame every `1 / fps` seconds.
#[wasm_bindgen]
pub fn simulate_chain(name: &str, coeff_scale: f64, duration: f64, fps: f64) -> Result<Vec<f64>, JsError> {
    if !(coeff_scale >= 0.0 && duration >= 0.0 && fps > 0.0) {
        return Err(JsError::new("need coeff_scale >= 0, duration >= 0 and fps > 0"));
    }
    let sc = scenario(name)?;
    let n = sc.model.n_links();
    let values: Vec<f64> = sc.truth.values().iter().map(|v| v * coeff_scale).collect();
    let hi: Vec<f64> = values.iter().map(|v| v.max(10.0)).collect();
    let coeffs = ParamVector::new(values, vec![0.0; 5 * n], hi).map_err(|e| JsError::new(&e.to_string()))?;
    let mut sim = Simulator::new(&sc.model, &coeffs).map_err(|e| JsError::new(&e.to_string()))?;
    let mut state = State::initial(&sc.model);
    let frames = (duration * fps).floor() as usize + 1;
    let steps_per_frame = ((1.0 / fps) / DEFAULT_DT).round().max(1.0) as usize;
    let mut out = vec![(n + 1) as f64];
    for f in 0..frames {
        if f > 0 {
            for _ in 0..steps_per_frame {
                sim.step(&mut state, DEFAULT_DT, Integrator::SemiImplicitEuler)
                    .map_err(|e| JsError::new(&e.to_string()))?;
            }
        }
        out.extend(flatten(&forward_kinematics(&sc.model, &state.q).centerline));
    }
    Ok(out)
}

/// Drag and lift magnitudes on one 30 mm link translating at `speed` m/s, as
/// the incidence angle sweeps 0° to 180°. Layout: `[deg, drag, lift]` per
/// sample, forces in newtons.
#[wasm_bindgen]
pub fn force_curve(blunt_drag: f64, slender_drag: f64, kutta_lift: f64, speed: f64, samples: usize) -> Vec<f64> {
    let link = scenarios::three_link_passive(scenarios::PassivePose::Horizontal).links.swap_remove(0);
    let c = HydroCoeffs {
        blunt_drag,
        slender_drag,
        kutta_lift,
        ..HydroCoeffs::default()
    };
    let samples = samples.max(2);
    let mut out = Vec::with_capacity(3 * samples);
    for k in 0..samples {
        let alpha = std::f64::consts::PI * k as f64 / (samples - 1) as f64;
        let v = Vector2::new(alpha.cos(), alpha.sin()) * speed;
        let frame = LinkFrame {
            origin: Vector2::zeros(),
            axis_angle: 0.0,
            com_pos: Vector2::zeros(),
            com_vel: v,
            omega: 0.0,
        };
        let f = link_fluid_wrench(&c, &FluidEnv::WATER, &link, &frame).force;
        let (drag, lift) = if speed > 0.0 {
            let vhat = v / speed;
            (-f.dot(&vhat), vhat.x * f.y - vhat.y * f.x)
        } else {
            (0.0, 0.0)
        };
        out.extend([alpha.to_degrees(), drag, lift]);
    }
    out
}

/// Identification of a scenario's coefficients from its own synthetic
/// target, advanced a few generations per call.
#[wasm_bindgen]
pub struct Identification {
    session: IdentSession,
    target: Trajectory,
}

#[wasm_bindgen]
impl Identification {
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str, noise_mm: f64, seed: u64, max_evals: usize) -> Result<Identification, JsError> {
        let sc = scenario(name)?;
        let target = synth_target(&sc.model, &sc.truth, sc.duration, sc.sample_rate, noise_mm * 1e-3, seed)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let mut cfg = IdentConfig::new(sc.model, target.clone(), false);
        cfg.cma.seed = seed;
        cfg.cma.max_evals = max_evals;
        let session = IdentSession::new(&cfg, 1).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(Self { session, target })
    }

    /// Runs up to `generations` generations; returns `true` once finished.
    pub fn step(&mut self, generations: usize) -> Result<bool, JsError> {
        for _ in 0..generations {
            if self.session.step().map_err(|e| JsError::new(&e.to_string()))?.is_some() {
                return Ok(true);
            }
        }
        Ok(self.session.stop_reason().is_some())
    }

    pub fn generation(&self) -> usize {
        self.session.history().len()
    }

    pub fn evals(&self) -> usize {
        self.session.eval_count()
    }

    pub fn best_loss(&self) -> f64 {
        self.session.best_loss()
    }

    /// Normalized keypoint error of the best point, or NaN if it diverges.
    pub fn best_error(&self) -> f64 {
        self.session
            .objective()
            .normalized_error(self.session.best_x())
            .ok()
            .flatten()
            .unwrap_or(f64::NAN)
    }

    pub fn stop_reason(&self) -> String {
        self.session.stop_reason().map_or("", |r| r.as_str()).to_string()
    }

    pub fn best_x(&self) -> Vec<f64> {
        self.session.best_x().to_vec()
    }

    /// Best-so-far loss per generation.
    pub fn history(&self) -> Vec<f64> {
        self.session.history().iter().map(|h| h.best).collect()
    }

    /// Target tip path as `[x, y, …]`.
    pub fn target_tip(&self) -> Vec<f64> {
        tip_path(&self.target)
    }

    /// Tip path simulated with the current best coefficients.
    pub fn best_tip(&self) -> Vec<f64> {
        match self.session.objective().simulate(self.session.best_x()) {
            Ok(Ok(t)) => tip_path(&t),
            _ => Vec::new(),
        }
    }
}

fn tip_path(t: &Trajectory) -> Vec<f64> {
    let k = t.n_keypoints() - 1;
    flatten((0..t.n_samples()).map(|i| &t.row(i)[k]))
}
