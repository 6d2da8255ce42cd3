//! Five-term ellipsoid fluid model evaluated at each link's center of mass.
//!
//! Per link, with `v` the COM velocity (still water), `ω` the link spin,
//! `x̂` the link axis and `A(v̂)` the ellipsoid's shadow area along `v̂`:
//!
//! | term         | force / torque                                    |
//! |--------------|---------------------------------------------------|
//! | blunt drag   | `-c0 ρ A(v̂) |v| v`                               |
//! | slender drag | `-c1 ρ max(A_surf - A(v̂), 0) |v| v`               |
//! | angular drag | `-c2 ρ r̄⁵ |ω| ω`                                  |
//! | Kutta lift   | `c3 ρ A(v̂) (v̂·x̂) ((v × x̂) × v) / |v|`            |
//! | Magnus lift  | `c4 ρ V (ω ẑ × v)`                                |
//!
//! plus a coefficient-free viscous floor `-6πβ r̄ v` and `-8πβ r̄³ ω`. No ½
//! factor appears in the drag terms; the coefficients absorb it.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector2, Vector3};

use crate::dynamics::{self, LinkFrame, State};
use crate::error::HydroError;
use crate::model::{FluidEnv, HydroCoeffs, LinkSpec, MechanismModel, ParamVector};

/// Force and torque acting at a link's center of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidWrench {
    pub force: Vector2<f64>,
    pub torque: f64,
}

impl FluidWrench {
    pub const ZERO: FluidWrench = FluidWrench {
        force: Vector2::new(0.0, 0.0),
        torque: 0.0,
    };
}

/// Shadow area of an ellipsoid with `semi_axes` seen along `dir`, where `dir`
/// is expressed in the body frame (`x` along the link axis). `dir` need not be
/// normalized.
pub fn projected_area(semi_axes: [f64; 3], dir: Vector3<f64>) -> Result<f64, HydroError> {
    let norm = dir.norm();
    if !(norm >= 1e-9) {
        return Err(HydroError::ZeroDirection);
    }
    let d = dir / norm;
    Ok(shadow_area(semi_axes, d.x, d.y, d.z))
}

#[inline]
fn shadow_area([rx, ry, rz]: [f64; 3], dx: f64, dy: f64, dz: f64) -> f64 {
    let a = ry * rz * dx;
    let b = rz * rx * dy;
    let c = rx * ry * dz;
    PI * (a * a + b * b + c * c).sqrt()
}

/// Shape constants of a link's enclosing ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EllipsoidGeometry {
    pub semi_axes: [f64; 3],
    pub mean_radius: f64,
    pub surface_area: f64,
    pub volume: f64,
}

impl EllipsoidGeometry {
    pub fn of(link: &LinkSpec) -> Self {
        let [rx, ry, rz] = link.semi_axes;
        Self {
            semi_axes: link.semi_axes,
            mean_radius: (rx + ry + rz) / 3.0,
            surface_area: 4.0 * PI * ((rx * ry + ry * rz + rz * rx) / 3.0),
            volume: link.ellipsoid_volume(),
        }
    }
}

/// The fluid wrench split into velocity-proportional damping and the
/// remaining (lift) force: `F = -translational_damping * v + lift`,
/// `τ = -rotational_damping * ω`.
///
/// Both damping factors are non-negative, which lets the integrator treat
/// them implicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FluidTerms {
    pub translational_damping: f64,
    pub rotational_damping: f64,
    pub lift: Vector2<f64>,
}

pub(crate) fn fluid_terms(
    c: &HydroCoeffs,
    env: &FluidEnv,
    geom: &EllipsoidGeometry,
    axis: Vector2<f64>,
    v: Vector2<f64>,
    omega: f64,
) -> FluidTerms {
    let rho = env.density;
    let rbar = geom.mean_radius;
    let speed = v.norm();

    let mut translational_damping = 6.0 * PI * env.viscosity * rbar;
    let rbar3 = rbar * rbar * rbar;
    let rotational_damping =
        8.0 * PI * env.viscosity * rbar3 + c.angular_drag * rho * rbar3 * rbar * rbar * omega.abs();
    // both lift terms point along ẑ × v; summing the scalars first keeps the
    // force exactly normal to v
    let mut lift_scale = c.magnus_lift * rho * geom.volume * omega;

    if speed > 0.0 {
        let vhat = v / speed;
        // link frame components of v̂; the planar motion has no z component
        let along = vhat.dot(&axis);
        let across = vhat.x * -axis.y + vhat.y * axis.x;
        let area = shadow_area(geom.semi_axes, along, across, 0.0);
        let side_area = (geom.surface_area - area).max(0.0);
        translational_damping += rho * (c.blunt_drag * area + c.slender_drag * side_area) * speed;

        // (v × x̂) = w ẑ, then (w ẑ) × v = w (-v_y, v_x)
        let w = v.x * axis.y - v.y * axis.x;
        lift_scale += c.kutta_lift * rho * area * along * w / speed;
    }
    let lift = Vector2::new(-v.y, v.x) * lift_scale;

    FluidTerms {
        translational_damping,
        rotational_damping,
        lift,
    }
}

/// Total fluid wrench on one link given its kinematic frame.
pub fn link_fluid_wrench(
    coeffs: &HydroCoeffs,
    env: &FluidEnv,
    link: &LinkSpec,
    frame: &LinkFrame,
) -> FluidWrench {
    let geom = EllipsoidGeometry::of(link);
    let axis = Vector2::new(frame.axis_angle.cos(), frame.axis_angle.sin());
    let t = fluid_terms(coeffs, env, &geom, axis, frame.com_vel, frame.omega);
    FluidWrench {
        force: t.lift - frame.com_vel * t.translational_damping,
        torque: -t.rotational_damping * frame.omega,
    }
}

/// Fluid wrenches mapped to joint torques through the COM Jacobians:
/// `τ = Σ Jvᵢᵀ Fᵢ + Jωᵢᵀ τᵢ`.
pub fn generalized_fluid_forces(
    model: &MechanismModel,
    coeffs: &ParamVector,
    state: &State,
) -> DVector<f64> {
    let n = model.n_links();
    let frames = dynamics::link_frames(model, &state.q, &state.qdot);
    let mut tau = DVector::zeros(n);
    for (i, frame) in frames.iter().enumerate() {
        let w = link_fluid_wrench(&coeffs.link(i), &model.fluid, &model.links[i], frame);
        for (j, origin) in frames[..=i].iter().map(|f| f.origin).enumerate() {
            let r = frame.com_pos - origin;
            let jv = Vector2::new(-r.y, r.x);
            tau[j] += jv.dot(&w.force) + w.torque;
        }
    }
    tau
}
