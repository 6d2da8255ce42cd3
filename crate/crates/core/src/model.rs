//! Structural description of a planar articulated underwater mechanism and
//! its per-link hydrodynamic parameterization.
//!
//! Generalized coordinates are the `n` joint angles. Joint `i` connects link
//! `i` to link `i - 1` (or to the fixed base for `i = 0`) and sits at
//! `length - overlap_radius` along the predecessor's axis. The last link is
//! drawn to its full length, so three 30 mm links with 5 mm overlap span
//! 80 mm end to end.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Number of hydrodynamic coefficients per link.
pub const COEFFS_PER_LINK: usize = 5;

/// Default search box for every coefficient type.
pub const DEFAULT_COEFF_BOUNDS: (f64, f64) = (0.0, 10.0);

/// Default starting point for one link, in coefficient order.
pub const DEFAULT_COEFF_X0: [f64; COEFFS_PER_LINK] = [0.5, 0.25, 1.5, 1.0, 1.0];

/// The five hydrodynamic coefficients of one link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HydroCoeffs {
    pub blunt_drag: f64,
    pub slender_drag: f64,
    pub angular_drag: f64,
    pub kutta_lift: f64,
    pub magnus_lift: f64,
}

impl HydroCoeffs {
    pub const fn from_array(c: [f64; COEFFS_PER_LINK]) -> Self {
        Self {
            blunt_drag: c[0],
            slender_drag: c[1],
            angular_drag: c[2],
            kutta_lift: c[3],
            magnus_lift: c[4],
        }
    }

    pub const fn to_array(self) -> [f64; COEFFS_PER_LINK] {
        [
            self.blunt_drag,
            self.slender_drag,
            self.angular_drag,
            self.kutta_lift,
            self.magnus_lift,
        ]
    }

    /// Coefficients with both lift terms zeroed.
    pub fn drag_only(self) -> Self {
        Self {
            kutta_lift: 0.0,
            magnus_lift: 0.0,
            ..self
        }
    }
}

/// Flattened per-link coefficients with their box bounds.
///
/// Layout is link-major: `[c0 c1 c2 c3 c4]` of link 0, then link 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ConfigError> {
        if values.is_empty() || values.len() % COEFFS_PER_LINK != 0 {
            return Err(ConfigError::InvalidParams(format!(
                "length {} is not a positive multiple of {COEFFS_PER_LINK}",
                values.len()
            )));
        }
        if lower.len() != values.len() || upper.len() != values.len() {
            return Err(ConfigError::InvalidParams(
                "bounds length differs from values length".into(),
            ));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ConfigError::InvalidParams(format!(
                    "bad bounds [{lo}, {hi}] at index {i}"
                )));
            }
            if lo < 0.0 {
                return Err(ConfigError::InvalidParams(format!(
                    "negative lower bound {lo} at index {i}"
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::InvalidParams(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            values,
            lower,
            upper,
        })
    }

    /// Values with the default `[0, 10]` box on every coordinate.
    pub fn with_default_bounds(values: Vec<f64>) -> Result<Self, ConfigError> {
        let n = values.len();
        Self::new(
            values,
            vec![DEFAULT_COEFF_BOUNDS.0; n],
            vec![DEFAULT_COEFF_BOUNDS.1; n],
        )
    }

    pub fn from_link_coeffs(coeffs: &[HydroCoeffs]) -> Result<Self, ConfigError> {
        Self::with_default_bounds(coeffs.iter().flat_map(|c| c.to_array()).collect())
    }

    /// The default starting point for an `n_links` chain.
    pub fn default_x0(n_links: usize) -> Self {
        Self::with_default_bounds(DEFAULT_COEFF_X0.repeat(n_links))
            .expect("default x0 is valid for n_links >= 1")
    }

    pub fn n_links(&self) -> usize {
        self.values.len() / COEFFS_PER_LINK
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn link(&self, i: usize) -> HydroCoeffs {
        let s = &self.values[i * COEFFS_PER_LINK..(i + 1) * COEFFS_PER_LINK];
        HydroCoeffs::from_array([s[0], s[1], s[2], s[3], s[4]])
    }

    pub fn links(&self) -> impl Iterator<Item = HydroCoeffs> + '_ {
        (0..self.n_links()).map(|i| self.link(i))
    }

    pub fn is_within_bounds(&self) -> bool {
        self.values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Same bounds, new values clamped into them.
    pub fn with_values_clamped(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.values.len());
        let values = values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect();
        Self {
            values,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for BasePose {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub length: f64,
    /// Distance from the proximal joint to the center of mass along the axis.
    pub com_offset: f64,
    pub mass: f64,
    /// Planar moment of inertia about the center of mass.
    pub inertia_com: f64,
    /// Enclosing ellipsoid `(r_x, r_y, r_z)`, `r_x` along the link axis.
    pub semi_axes: [f64; 3],
    /// Offset between this link's distal end and the next joint.
    pub overlap_radius: f64,
}

impl LinkSpec {
    /// Joint-to-joint distance along this link.
    pub fn effective_length(&self) -> f64 {
        self.length - self.overlap_radius
    }

    pub fn ellipsoid_volume(&self) -> f64 {
        let [a, b, c] = self.semi_axes;
        4.0 / 3.0 * PI * a * b * c
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointSpec {
    pub damping: f64,
    pub friction_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorKind {
    None,
    VelocityServo,
}

/// Constant reference velocity over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub v_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub joint_index: usize,
    pub kind: ActuatorKind,
    pub kv: f64,
    pub force_range: (f64, f64),
    #[serde(default)]
    pub schedule: Vec<ScheduleSegment>,
}

impl ActuatorSpec {
    /// Reference velocity at time `t`; zero outside every segment.
    pub fn reference_velocity(&self, t: f64) -> f64 {
        self.schedule
            .iter()
            .find(|s| t >= s.t_start && t < s.t_end)
            .map_or(0.0, |s| s.v_ref)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidEnv {
    pub density: f64,
    pub viscosity: f64,
    /// Magnitude; gravity always points along world -y.
    pub gravity: f64,
}

impl FluidEnv {
    pub const WATER: FluidEnv = FluidEnv {
        density: 1000.0,
        viscosity: 1.0e-3,
        gravity: 9.81,
    };

    pub const VACUUM: FluidEnv = FluidEnv {
        density: 0.0,
        viscosity: 0.0,
        gravity: 9.81,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismModel {
    pub schema_version: u32,
    pub base_pose: BasePose,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub actuators: Vec<ActuatorSpec>,
    pub fluid: FluidEnv,
    pub initial_state: InitialState,
}

impl MechanismModel {
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Arc length of the straight chain from the base joint to the distal tip.
    pub fn system_length(&self) -> f64 {
        match self.links.split_last() {
            Some((last, rest)) => {
                rest.iter().map(LinkSpec::effective_length).sum::<f64>() + last.length
            }
            None => 0.0,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Reads a model file and checks its schema version. Structural validity
    /// is reported separately by [`validate_model`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                found: model.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(model)
    }

    /// Like [`MechanismModel::load`] but also rejects structurally invalid models.
    pub fn load_validated(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let model = Self::load(path)?;
        model.ensure_valid()?;
        Ok(model)
    }

    pub fn ensure_valid(&self) -> Result<(), ConfigError> {
        let violations = validate_model(self);
        if violations.is_empty() {
            Ok(())
        } else {
            let joined = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(ConfigError::InvalidModel(joined))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One broken invariant, located by a path such as `links[1].mass`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(Violation {
                path: path.into(),
                message: message.into(),
            });
        }
    }
}

/// Lists every invariant violation in `model`. An empty list means the model
/// is ready to simulate.
pub fn validate_model(model: &MechanismModel) -> Vec<Violation> {
    let mut c = Checker(Vec::new());
    let n = model.links.len();

    c.check(
        model.schema_version == MODEL_SCHEMA_VERSION,
        "schema_version",
        format!("expected {MODEL_SCHEMA_VERSION}, got {}", model.schema_version),
    );
    let bp = model.base_pose;
    c.check(
        bp.x.is_finite() && bp.y.is_finite() && bp.theta.is_finite(),
        "base_pose",
        "must be finite",
    );
    c.check(n >= 1, "links", "at least one link is required");
    c.check(
        model.joints.len() == n,
        "joints",
        format!("expected {n} joints, got {}", model.joints.len()),
    );

    for (i, l) in model.links.iter().enumerate() {
        let p = |field: &str| format!("links[{i}].{field}");
        c.check(l.length.is_finite() && l.length > 0.0, p("length"), "must be > 0");
        c.check(l.mass.is_finite() && l.mass > 0.0, p("mass"), "must be > 0");
        c.check(
            l.inertia_com.is_finite() && l.inertia_com >= 0.0,
            p("inertia_com"),
            "must be >= 0",
        );
        c.check(
            l.semi_axes.iter().all(|r| r.is_finite() && *r > 0.0),
            p("semi_axes"),
            "all semi-axes must be > 0",
        );
        c.check(
            l.com_offset.is_finite() && (0.0..=l.length).contains(&l.com_offset),
            p("com_offset"),
            "must lie in [0, length]",
        );
        c.check(
            l.overlap_radius.is_finite()
                && l.overlap_radius >= 0.0
                && l.overlap_radius < l.length,
            p("overlap_radius"),
            "must lie in [0, length)",
        );
    }

    for (i, j) in model.joints.iter().enumerate() {
        let p = |field: &str| format!("joints[{i}].{field}");
        c.check(
            j.damping.is_finite() && j.damping >= 0.0,
            p("damping"),
            "must be >= 0",
        );
        c.check(
            j.friction_loss.is_finite() && j.friction_loss >= 0.0,
            p("friction_loss"),
            "must be >= 0",
        );
        if let Some((lo, hi)) = j.limits {
            c.check(lo < hi, p("limits"), "lower limit must be below upper limit");
        }
    }

    let mut seen = vec![false; n];
    for (a, act) in model.actuators.iter().enumerate() {
        let p = |field: &str| format!("actuators[{a}].{field}");
        if act.joint_index >= n {
            c.check(false, p("joint_index"), format!("no joint {}", act.joint_index));
        } else {
            c.check(
                !seen[act.joint_index],
                p("joint_index"),
                format!("joint {} already actuated", act.joint_index),
            );
            seen[act.joint_index] = true;
        }
        c.check(act.kv.is_finite() && act.kv >= 0.0, p("kv"), "must be >= 0");
        let (lo, hi) = act.force_range;
        c.check(
            lo <= 0.0 && hi >= 0.0,
            p("force_range"),
            "must satisfy tau_min <= 0 <= tau_max",
        );
        for (s, seg) in act.schedule.iter().enumerate() {
            c.check(
                seg.t_start.is_finite()
                    && seg.t_end.is_finite()
                    && seg.v_ref.is_finite()
                    && seg.t_start < seg.t_end,
                format!("actuators[{a}].schedule[{s}]"),
                "segment must be finite with t_start < t_end",
            );
        }
        for (s, pair) in act.schedule.windows(2).enumerate() {
            let (prev, next) = (pair[0], pair[1]);
            let path = format!("actuators[{a}].schedule[{}]", s + 1);
            if next.t_start < prev.t_start {
                c.check(false, path, "segments are not time-ordered");
            } else {
                c.check(
                    next.t_start >= prev.t_end,
                    path,
                    format!("overlaps previous segment ending at {}", prev.t_end),
                );
            }
        }
    }

    let f = model.fluid;
    c.check(
        f.density.is_finite() && f.density >= 0.0,
        "fluid.density",
        "must be >= 0",
    );
    c.check(
        f.viscosity.is_finite() && f.viscosity >= 0.0,
        "fluid.viscosity",
        "must be >= 0",
    );
    c.check(
        f.gravity.is_finite() && f.gravity >= 0.0,
        "fluid.gravity",
        "must be >= 0",
    );

    let s = &model.initial_state;
    c.check(
        s.q.len() == n && s.qdot.len() == n,
        "initial_state",
        format!("q and qdot must both have length {n}"),
    );
    c.check(
        s.q.iter().chain(&s.qdot).all(|v| v.is_finite()),
        "initial_state",
        "must be finite",
    );

    c.0
}
