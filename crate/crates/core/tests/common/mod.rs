#![allow(dead_code)]

use hydrofit::dynamics::{total_energy, Integrator, Simulator, State};
use hydrofit::model::{
    BasePose, FluidEnv, HydroCoeffs, InitialState, JointSpec, LinkSpec, MechanismModel, ParamVector,
    MODEL_SCHEMA_VERSION,
};
use hydrofit::scenarios;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random free-swinging chain of ellipsoidal links with a random state.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize, fluid: FluidEnv) -> MechanismModel {
    let links = (0..n)
        .map(|_| {
            let length = rng.random_range(0.02..0.05);
            let r = rng.random_range(0.003..0.008);
            let mass = rng.random_range(0.002..0.01);
            LinkSpec {
                length,
                com_offset: length * rng.random_range(0.3..0.7),
                mass,
                inertia_com: mass * (length * length / 4.0 + r * r) / 5.0,
                semi_axes: [length / 2.0, r, r],
                overlap_radius: length * 0.1,
            }
        })
        .collect();
    let q = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let qdot = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    MechanismModel {
        schema_version: MODEL_SCHEMA_VERSION,
        base_pose: BasePose {
            x: 0.0,
            y: 0.0,
            theta: rng.random_range(-3.0..3.0),
        },
        links,
        joints: vec![JointSpec::default(); n],
        actuators: vec![],
        fluid,
        initial_state: InitialState { q, qdot },
    }
}

pub fn zero_coeffs(n: usize) -> ParamVector {
    ParamVector::with_default_bounds(vec![0.0; 5 * n]).unwrap()
}

/// Reference coefficients with both lift terms removed.
pub fn drag_only(n: usize) -> ParamVector {
    let c: Vec<HydroCoeffs> = scenarios::reference_coeffs(n).links().map(HydroCoeffs::drag_only).collect();
    ParamVector::from_link_coeffs(&c).unwrap()
}

/// Largest single-step increase of total mechanical energy, in joules.
pub fn max_energy_rise(
    model: &MechanismModel,
    coeffs: &ParamVector,
    integrator: Integrator,
    dt: f64,
    steps: usize,
) -> f64 {
    let mut sim = Simulator::new(model, coeffs).unwrap();
    let mut state = State::initial(model);
    let mut e = total_energy(model, &state);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        sim.step(&mut state, dt, integrator).unwrap();
        let next = total_energy(model, &state);
        worst = worst.max(next - e);
        e = next;
    }
    worst
}

/// Relative change of total energy after `steps` RK4 steps.
pub fn relative_energy_drift(model: &MechanismModel, dt: f64, steps: usize) -> f64 {
    let coeffs = zero_coeffs(model.n_links());
    let mut sim = Simulator::new(model, &coeffs).unwrap();
    let mut state = State::initial(model);
    let e0 = total_energy(model, &state);
    let scale = e0.abs().max(hydrofit::dynamics::kinetic_energy(model, &state));
    for _ in 0..steps {
        sim.step(&mut state, dt, Integrator::Rk4).unwrap();
    }
    (total_energy(model, &state) - e0).abs() / scale
}
