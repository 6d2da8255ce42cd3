//! Planar n-link chain dynamics.
//!
//! Equations of motion are `M(q) q̈ = τ_act + τ_fluid − b(q, q̇) − D q̇ − τ_fric`
//! with `b` collecting Coriolis/centrifugal terms and the net weight
//! `(m − ρV) g` of each link acting at its COM (buoyancy is centered on the
//! COM). With this sign convention a horizontal single link resting on the
//! +x axis has `b = +m g lc`: gravity accelerates it clockwise.
//!
//! The default integrator is semi-implicit Euler in which every velocity
//! dependent dissipative term (joint damping, regularized Coulomb friction,
//! fluid drag linearized about the current velocity, and an unsaturated
//! velocity servo) enters the velocity update implicitly:
//!
//! `(M + h D(q̇ₖ)) q̇ₖ₊₁ = M q̇ₖ + h (τ_explicit − b)`, then `qₖ₊₁ = qₖ + h q̇ₖ₊₁`.
//!
//! RK4 with fully explicit forces is available for conservation checks.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::SimError;
use crate::hydro::{fluid_terms, EllipsoidGeometry};
use crate::model::{ActuatorKind, ActuatorSpec, HydroCoeffs, MechanismModel, ParamVector};
use crate::trajectory::{keypoint_labels, keypoints_from_centerline, Trajectory};

/// Velocity scale of the `tanh` friction regularization, rad/s.
pub const FRICTION_VELOCITY_SCALE: f64 = 1e-3;

/// Any joint faster than this aborts the simulation.
pub const DIVERGENCE_SPEED: f64 = 1e6;

/// Condition estimate above which the system matrix counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

pub const DEFAULT_DT: f64 = 1e-3;

/// Arc-length fractions of the default observation points P0..P3.
pub const DEFAULT_KEYPOINT_FRACTIONS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl State {
    pub fn new(t: f64, q: Vec<f64>, qdot: Vec<f64>) -> Self {
        assert_eq!(q.len(), qdot.len(), "q and qdot lengths differ");
        Self { t, q, qdot }
    }

    pub fn initial(model: &MechanismModel) -> Self {
        Self::new(
            0.0,
            model.initial_state.q.clone(),
            model.initial_state.qdot.clone(),
        )
    }
}

/// World-frame kinematics of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFrame {
    /// Position of the link's proximal joint.
    pub origin: Vector2<f64>,
    pub axis_angle: f64,
    pub com_pos: Vector2<f64>,
    pub com_vel: Vector2<f64>,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub frames: Vec<LinkFrame>,
    /// Joint positions from the base outward, followed by the distal tip.
    pub centerline: Vec<Vector2<f64>>,
}

impl Kinematics {
    pub fn tip(&self) -> Vector2<f64> {
        *self.centerline.last().expect("centerline has at least two points")
    }
}

#[inline]
fn unit(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

#[inline]
fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

/// Link frames with velocities.
pub fn link_frames(model: &MechanismModel, q: &[f64], qdot: &[f64]) -> Vec<LinkFrame> {
    let n = model.n_links();
    assert!(q.len() == n && qdot.len() == n, "state length must equal link count");
    let mut origin = Vector2::new(model.base_pose.x, model.base_pose.y);
    let mut origin_vel = Vector2::zeros();
    let mut theta = model.base_pose.theta;
    let mut omega = 0.0;
    let mut frames = Vec::with_capacity(n);
    for (i, link) in model.links.iter().enumerate() {
        theta += q[i];
        omega += qdot[i];
        let e = unit(theta);
        frames.push(LinkFrame {
            origin,
            axis_angle: theta,
            com_pos: origin + e * link.com_offset,
            com_vel: origin_vel + perp(e) * (omega * link.com_offset),
            omega,
        });
        origin += e * link.effective_length();
        origin_vel += perp(e) * (omega * link.effective_length());
    }
    frames
}

pub fn forward_kinematics(model: &MechanismModel, q: &[f64]) -> Kinematics {
    let frames = link_frames(model, q, &vec![0.0; q.len()]);
    let mut centerline: Vec<Vector2<f64>> = frames.iter().map(|f| f.origin).collect();
    if let (Some(last), Some(spec)) = (frames.last(), model.links.last()) {
        centerline.push(last.origin + unit(last.axis_angle) * spec.length);
    }
    Kinematics { frames, centerline }
}

/// Translational COM Jacobian of every link: entry `[i][j]` is
/// `∂ com_i / ∂ q_j`, zero for `j > i`.
pub fn com_jacobians(model: &MechanismModel, q: &[f64]) -> Vec<Vec<Vector2<f64>>> {
    let frames = link_frames(model, q, &vec![0.0; q.len()]);
    frames
        .iter()
        .enumerate()
        .map(|(i, fi)| {
            frames
                .iter()
                .enumerate()
                .map(|(j, fj)| {
                    if j <= i {
                        perp(fi.com_pos - fj.origin)
                    } else {
                        Vector2::zeros()
                    }
                })
                .collect()
        })
        .collect()
}

/// Joint-space inertia matrix.
pub fn mass_matrix(model: &MechanismModel, q: &[f64]) -> DMatrix<f64> {
    let n = model.n_links();
    let jac = com_jacobians(model, q);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let mut s = 0.0;
            for i in k..n {
                let link = &model.links[i];
                s += link.mass * jac[i][j].dot(&jac[i][k]) + link.inertia_com;
            }
            m[(j, k)] = s;
            m[(k, j)] = s;
        }
    }
    m
}

fn net_weight(model: &MechanismModel, i: usize) -> f64 {
    let link = &model.links[i];
    (link.mass - model.fluid.density * link.ellipsoid_volume()) * model.fluid.gravity
}

/// Coriolis/centrifugal plus gravity-buoyancy generalized forces, signed so
/// that `M q̈ = τ − b`.
pub fn bias_forces(model: &MechanismModel, state: &State) -> DVector<f64> {
    let n = model.n_links();
    let frames = link_frames(model, &state.q, &state.qdot);
    let jac = com_jacobians(model, &state.q);
    // COM acceleration at q̈ = 0: centripetal terms of every preceding segment
    let mut origin_acc = Vector2::zeros();
    let mut b = DVector::zeros(n);
    for (i, f) in frames.iter().enumerate() {
        let link = &model.links[i];
        let e = unit(f.axis_angle);
        let w2 = f.omega * f.omega;
        let com_acc = origin_acc - e * (w2 * link.com_offset);
        origin_acc -= e * (w2 * link.effective_length());
        let gravity = Vector2::new(0.0, -net_weight(model, i));
        let generalized = com_acc * link.mass - gravity;
        for j in 0..=i {
            b[j] += jac[i][j].dot(&generalized);
        }
    }
    b
}

/// Servo torque `clamp(kv (v_ref(t) − q̇), τ_min, τ_max)`; zero for unpowered
/// actuators.
pub fn actuator_torque(act: &ActuatorSpec, state: &State) -> f64 {
    match act.kind {
        ActuatorKind::None => 0.0,
        ActuatorKind::VelocityServo => {
            let (lo, hi) = act.force_range;
            let err = act.reference_velocity(state.t) - state.qdot[act.joint_index];
            (act.kv * err).clamp(lo, hi)
        }
    }
}

pub fn kinetic_energy(model: &MechanismModel, state: &State) -> f64 {
    link_frames(model, &state.q, &state.qdot)
        .iter()
        .zip(&model.links)
        .map(|(f, l)| 0.5 * (l.mass * f.com_vel.norm_squared() + l.inertia_com * f.omega * f.omega))
        .sum()
}

/// Gravity-buoyancy potential, zero at the world `y = 0` line.
pub fn potential_energy(model: &MechanismModel, state: &State) -> f64 {
    link_frames(model, &state.q, &state.qdot)
        .iter()
        .enumerate()
        .map(|(i, f)| net_weight(model, i) * f.com_pos.y)
        .sum()
}

pub fn total_energy(model: &MechanismModel, state: &State) -> f64 {
    kinetic_energy(model, state) + potential_energy(model, state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    SemiImplicitEuler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    pub integrator: Integrator,
    pub keypoint_fractions: Vec<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            integrator: Integrator::SemiImplicitEuler,
            keypoint_fractions: DEFAULT_KEYPOINT_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LinkConsts {
    step: f64,
    com: f64,
    mass: f64,
    inertia: f64,
    weight: f64,
    geom: EllipsoidGeometry,
    coeffs: HydroCoeffs,
}

#[derive(Debug, Clone, Copy)]
enum Assembly {
    /// `A = M`, `rhs = τ − b`: solve gives `q̈`.
    Explicit,
    /// `A = M + h D`, `rhs = M q̇ + h (τ_explicit − b)`: solve gives `q̇⁺`.
    Implicit(f64),
}

/// Reusable integrator for one model and coefficient set. Holds all scratch
/// buffers so stepping does not allocate.
pub struct Simulator<'a> {
    model: &'a MechanismModel,
    links: Vec<LinkConsts>,
    n: usize,
    // per-link scratch
    com_vel: Vec<Vector2<f64>>,
    omega: Vec<f64>,
    force: Vec<Vector2<f64>>,
    damp: Vec<f64>,
    rot_damp: Vec<f64>,
    origin: Vec<Vector2<f64>>,
    com_pos: Vec<Vector2<f64>>,
    jac: Vec<Vector2<f64>>,
    a: Vec<f64>,
    rhs: Vec<f64>,
    // RK4 scratch
    k_q: [Vec<f64>; 4],
    k_v: [Vec<f64>; 4],
    tmp_q: Vec<f64>,
    tmp_v: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a MechanismModel, coeffs: &ParamVector) -> Result<Self, SimError> {
        let n = model.n_links();
        if coeffs.n_links() != n {
            return Err(SimError::InvalidInput(format!(
                "{} coefficient sets for {n} links",
                coeffs.n_links()
            )));
        }
        let links = model
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| LinkConsts {
                step: l.effective_length(),
                com: l.com_offset,
                mass: l.mass,
                inertia: l.inertia_com,
                weight: net_weight(model, i),
                geom: EllipsoidGeometry::of(l),
                coeffs: coeffs.link(i),
            })
            .collect();
        let z2 = Vector2::zeros();
        Ok(Self {
            model,
            links,
            n,
            com_vel: vec![z2; n],
            omega: vec![0.0; n],
            force: vec![z2; n],
            damp: vec![0.0; n],
            rot_damp: vec![0.0; n],
            origin: vec![z2; n],
            com_pos: vec![z2; n],
            jac: vec![z2; n * n],
            a: vec![0.0; n * n],
            rhs: vec![0.0; n],
            k_q: std::array::from_fn(|_| vec![0.0; n]),
            k_v: std::array::from_fn(|_| vec![0.0; n]),
            tmp_q: vec![0.0; n],
            tmp_v: vec![0.0; n],
        })
    }

    pub fn model(&self) -> &MechanismModel {
        self.model
    }

    /// Fills `self.a` and `self.rhs`.
    fn assemble(&mut self, t: f64, q: &[f64], qdot: &[f64], mode: Assembly) {
        let n = self.n;
        let model = self.model;
        let base = &model.base_pose;
        let mut o = Vector2::new(base.x, base.y);
        let mut o_vel = Vector2::zeros();
        let mut o_acc = Vector2::zeros();
        let mut theta = base.theta;
        let mut omega = 0.0;

        for i in 0..n {
            let lc = &self.links[i];
            theta += q[i];
            omega += qdot[i];
            let e = unit(theta);
            let ep = perp(e);
            let v = o_vel + ep * (omega * lc.com);
            let centripetal = o_acc - e * (omega * omega * lc.com);

            let fl = fluid_terms(&lc.coeffs, &model.fluid, &lc.geom, e, v, omega);
            let gravity = Vector2::new(0.0, -lc.weight);
            let mut f = gravity + fl.lift - centripetal * lc.mass;
            match mode {
                Assembly::Explicit => {
                    f -= v * fl.translational_damping;
                    self.damp[i] = 0.0;
                    self.rot_damp[i] = 0.0;
                    self.omega[i] = -fl.rotational_damping * omega;
                }
                Assembly::Implicit(h) => {
                    f *= h;
                    f += v * lc.mass;
                    self.damp[i] = h * fl.translational_damping;
                    self.rot_damp[i] = h * fl.rotational_damping;
                    self.omega[i] = lc.inertia * omega;
                }
            }
            self.force[i] = f;
            self.com_vel[i] = v;
            self.origin[i] = o;
            self.com_pos[i] = o + e * lc.com;

            o += e * lc.step;
            o_vel += ep * (omega * lc.step);
            o_acc -= e * (omega * omega * lc.step);
        }

        for i in 0..n {
            for j in 0..=i {
                self.jac[i * n + j] = perp(self.com_pos[i] - self.origin[j]);
            }
        }

        for j in 0..n {
            let mut r = 0.0;
            for i in j..n {
                r += self.jac[i * n + j].dot(&self.force[i]) + self.omega[i];
            }
            self.rhs[j] = r;
            for k in j..n {
                let mut s = 0.0;
                for i in k..n {
                    let lc = &self.links[i];
                    s += (lc.mass + self.damp[i]) * self.jac[i * n + j].dot(&self.jac[i * n + k])
                        + lc.inertia
                        + self.rot_damp[i];
                }
                self.a[j * n + k] = s;
                self.a[k * n + j] = s;
            }
        }

        for (j, joint) in model.joints.iter().enumerate() {
            let w = qdot[j];
            match mode {
                Assembly::Explicit => {
                    self.rhs[j] -= joint.damping * w
                        + joint.friction_loss * (w / FRICTION_VELOCITY_SCALE).tanh();
                }
                Assembly::Implicit(h) => {
                    // f tanh(w/ε) = [f tanh(w/ε) / w] w, slope bounded by f/ε
                    let x = w / FRICTION_VELOCITY_SCALE;
                    let ratio = if x.abs() < 1e-8 { 1.0 } else { x.tanh() / x };
                    let friction = joint.friction_loss * ratio / FRICTION_VELOCITY_SCALE;
                    self.a[j * n + j] += h * (joint.damping + friction);
                }
            }
        }

        for act in &model.actuators {
            if act.kind == ActuatorKind::None {
                continue;
            }
            let j = act.joint_index;
            let v_ref = act.reference_velocity(t);
            let (lo, hi) = act.force_range;
            let raw = act.kv * (v_ref - qdot[j]);
            match mode {
                Assembly::Explicit => self.rhs[j] += raw.clamp(lo, hi),
                Assembly::Implicit(h) => {
                    if (lo..=hi).contains(&raw) {
                        self.a[j * n + j] += h * act.kv;
                        self.rhs[j] += h * act.kv * v_ref;
                    } else {
                        self.rhs[j] += h * raw.clamp(lo, hi);
                    }
                }
            }
        }
    }

    /// Solves `a x = rhs` in place (result in `rhs`) by Cholesky factorization.
    fn solve(&mut self) -> Result<(), SimError> {
        let n = self.n;
        let a = &mut self.a;
        let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 0.0) {
                return Err(SimError::SingularMass {
                    condition: f64::INFINITY,
                });
            }
            let ljj = d.sqrt();
            dmin = dmin.min(ljj);
            dmax = dmax.max(ljj);
            a[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / ljj;
            }
        }
        let condition = (dmax / dmin).powi(2);
        if condition > SINGULAR_CONDITION {
            return Err(SimError::SingularMass { condition });
        }
        let x = &mut self.rhs;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= a[i * n + k] * x[k];
            }
            x[i] = s / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= a[k * n + i] * x[k];
            }
            x[i] = s / a[i * n + i];
        }
        Ok(())
    }

    /// Joint accelerations with every force explicit.
    pub fn acceleration(&mut self, t: f64, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>, SimError> {
        self.assemble(t, q, qdot, Assembly::Explicit);
        self.solve()?;
        Ok(self.rhs.clone())
    }

    /// Advances `state` by `dt` in place.
    pub fn step(&mut self, state: &mut State, dt: f64, integrator: Integrator) -> Result<(), SimError> {
        if !(dt > 0.0) {
            return Err(SimError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        match integrator {
            Integrator::SemiImplicitEuler => {
                self.assemble(state.t, &state.q, &state.qdot, Assembly::Implicit(dt));
                self.solve()?;
                for j in 0..self.n {
                    state.qdot[j] = self.rhs[j];
                    state.q[j] += dt * state.qdot[j];
                }
            }
            Integrator::Rk4 => self.rk4(state, dt)?,
        }
        state.t += dt;
        check_divergence(state)
    }

    fn rk4(&mut self, state: &mut State, dt: f64) -> Result<(), SimError> {
        let n = self.n;
        let half = 0.5 * dt;
        for stage in 0..4 {
            let (ts, scale) = match stage {
                0 => (state.t, 0.0),
                1 | 2 => (state.t + half, half),
                _ => (state.t + dt, dt),
            };
            for j in 0..n {
                let (pq, pv) = if stage == 0 {
                    (0.0, 0.0)
                } else {
                    (self.k_q[stage - 1][j], self.k_v[stage - 1][j])
                };
                self.tmp_q[j] = state.q[j] + scale * pq;
                self.tmp_v[j] = state.qdot[j] + scale * pv;
            }
            let (tq, tv) = (std::mem::take(&mut self.tmp_q), std::mem::take(&mut self.tmp_v));
            self.assemble(ts, &tq, &tv, Assembly::Explicit);
            let solved = self.solve();
            self.k_q[stage].copy_from_slice(&tv);
            self.tmp_q = tq;
            self.tmp_v = tv;
            solved?;
            self.k_v[stage].copy_from_slice(&self.rhs);
        }
        let w = dt / 6.0;
        for j in 0..n {
            state.q[j] += w * (self.k_q[0][j] + 2.0 * self.k_q[1][j] + 2.0 * self.k_q[2][j] + self.k_q[3][j]);
            state.qdot[j] += w * (self.k_v[0][j] + 2.0 * self.k_v[1][j] + 2.0 * self.k_v[2][j] + self.k_v[3][j]);
        }
        Ok(())
    }

    /// Observation points at configuration `q`, written into `out`.
    fn keypoints_into(&self, q: &[f64], fractions: &[f64], centerline: &mut Vec<Vector2<f64>>, out: &mut Vec<Vector2<f64>>) {
        let base = &self.model.base_pose;
        centerline.clear();
        let mut o = Vector2::new(base.x, base.y);
        let mut theta = base.theta;
        for (i, lc) in self.links.iter().enumerate() {
            theta += q[i];
            centerline.push(o);
            let e = unit(theta);
            if i + 1 == self.n {
                centerline.push(o + e * self.model.links[i].length);
            }
            o += e * lc.step;
        }
        let kp = keypoints_from_centerline(centerline, fractions)
            .expect("valid models have a non-degenerate centerline");
        out.extend(kp);
    }
}

fn check_divergence(state: &State) -> Result<(), SimError> {
    for (&v, &q) in state.qdot.iter().zip(&state.q) {
        if !(v.abs() <= DIVERGENCE_SPEED) || !q.is_finite() {
            return Err(SimError::DivergedSimulation {
                t: state.t,
                speed: v.abs(),
            });
        }
    }
    Ok(())
}

/// One semi-implicit Euler step.
pub fn step(model: &MechanismModel, coeffs: &ParamVector, state: &State, dt: f64) -> Result<State, SimError> {
    step_with(model, coeffs, state, dt, Integrator::SemiImplicitEuler)
}

pub fn step_with(
    model: &MechanismModel,
    coeffs: &ParamVector,
    state: &State,
    dt: f64,
    integrator: Integrator,
) -> Result<State, SimError> {
    let mut next = state.clone();
    Simulator::new(model, coeffs)?.step(&mut next, dt, integrator)?;
    Ok(next)
}

/// Simulates from the model's initial state and samples the default keypoints
/// at `sample_times`.
pub fn simulate(
    model: &MechanismModel,
    coeffs: &ParamVector,
    duration: f64,
    dt: f64,
    sample_times: &[f64],
) -> Result<Trajectory, SimError> {
    let settings = SimSettings {
        dt,
        ..SimSettings::default()
    };
    simulate_with(model, coeffs, duration, &settings, sample_times)
}

/// Integrates over `[0, duration]` and emits keypoints at each sample time,
/// interpolating the joint angles linearly between the bracketing steps.
pub fn simulate_with(
    model: &MechanismModel,
    coeffs: &ParamVector,
    duration: f64,
    settings: &SimSettings,
    sample_times: &[f64],
) -> Result<Trajectory, SimError> {
    let dt = settings.dt;
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(SimError::InvalidInput(format!(
            "need dt > 0 and duration >= 0, got dt = {dt}, duration = {duration}"
        )));
    }
    if sample_times.is_empty() {
        return Err(SimError::InvalidInput("no sample times".into()));
    }
    let horizon_tol = 1e-9 * duration.max(1.0);
    for w in sample_times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(SimError::InvalidInput("sample times must be strictly ascending".into()));
        }
    }
    if !(sample_times[0] >= 0.0) || !(sample_times[sample_times.len() - 1] <= duration + horizon_tol) {
        return Err(SimError::InvalidInput(format!(
            "sample times must lie within [0, {duration}]"
        )));
    }

    let mut sim = Simulator::new(model, coeffs)?;
    let n = model.n_links();
    let fractions = &settings.keypoint_fractions;
    let mut state = State::initial(model);
    let mut prev_q = state.q.clone();
    let mut k: u64 = 0;
    let mut centerline = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(sample_times.len() * fractions.len());
    let mut q_sample = vec![0.0; n];

    for &ts in sample_times {
        while (k as f64) * dt < ts {
            prev_q.copy_from_slice(&state.q);
            sim.step(&mut state, dt, settings.integrator)?;
            k += 1;
            // step counts, not accumulated sums, define the clock
            state.t = k as f64 * dt;
        }
        let tk = k as f64 * dt;
        if tk == ts || k == 0 {
            q_sample.copy_from_slice(&state.q);
        } else {
            let alpha = (ts - (tk - dt)) / dt;
            for j in 0..n {
                q_sample[j] = prev_q[j] + alpha * (state.q[j] - prev_q[j]);
            }
        }
        sim.keypoints_into(&q_sample, fractions, &mut centerline, &mut points);
    }

    Trajectory::new(sample_times.to_vec(), keypoint_labels(fractions.len()), points)
        .map_err(|e| SimError::InvalidInput(e.to_string()))
}
