//! Reference mechanisms used by the shipped configs, the acceptance suite and
//! the browser demo.
//!
//! Three-link mechanism: 30 mm links joined with a 5 mm overlap (80 mm end to
//! end), tested as a purely passive release from two poses and as an
//! active-passive chain whose first joint is velocity-driven. The arm is an
//! eight-segment tapered chain driven by the same 2:1 slow/fast schedule.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::model::{
    ActuatorKind, ActuatorSpec, BasePose, FluidEnv, HydroCoeffs, InitialState, JointSpec,
    LinkSpec, MechanismModel, ParamVector, ScheduleSegment, MODEL_SCHEMA_VERSION,
};

pub const LINK_LENGTH: f64 = 0.030;
pub const LINK_OVERLAP: f64 = 0.005;
const LINK_MASS: f64 = 0.003;
const LINK_SEMI_AXES: [f64; 3] = [0.015, 0.005, 0.005];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassivePose {
    /// Chain held horizontal, then released.
    Horizontal,
    /// Distal link held at a right angle to the middle link, then released.
    RightAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivePose {
    Straight,
    Bent,
}

/// Piecewise-constant reference velocity: each cycle runs at `slow` rad/s for
/// `slow_duration`, then at `-2 * slow` for half as long, so every cycle
/// returns to its starting angle.
pub fn two_to_one_schedule(slow: f64, slow_duration: f64, cycles: usize) -> Vec<ScheduleSegment> {
    let fast_duration = slow_duration / 2.0;
    let period = slow_duration + fast_duration;
    (0..cycles)
        .flat_map(|c| {
            let t0 = c as f64 * period;
            [
                ScheduleSegment {
                    t_start: t0,
                    t_end: t0 + slow_duration,
                    v_ref: slow,
                },
                ScheduleSegment {
                    t_start: t0 + slow_duration,
                    t_end: t0 + period,
                    v_ref: -2.0 * slow,
                },
            ]
        })
        .collect()
}

fn ellipsoid_link(length: f64, overlap: f64, radius: f64, density: f64) -> LinkSpec {
    let rx = length / 2.0;
    let semi_axes = [rx, radius, radius];
    let volume = 4.0 / 3.0 * std::f64::consts::PI * rx * radius * radius;
    let mass = density * volume;
    LinkSpec {
        length,
        com_offset: length / 2.0,
        mass,
        inertia_com: mass * (rx * rx + radius * radius) / 5.0,
        semi_axes,
        overlap_radius: overlap,
    }
}

fn three_link_links() -> Vec<LinkSpec> {
    let [rx, ry, _] = LINK_SEMI_AXES;
    let link = LinkSpec {
        length: LINK_LENGTH,
        com_offset: LINK_LENGTH / 2.0,
        mass: LINK_MASS,
        inertia_com: LINK_MASS * (rx * rx + ry * ry) / 5.0,
        semi_axes: LINK_SEMI_AXES,
        overlap_radius: LINK_OVERLAP,
    };
    vec![link; 3]
}

fn three_link_joints() -> Vec<JointSpec> {
    vec![
        JointSpec {
            damping: 1.0e-5,
            friction_loss: 2.0e-6,
            limits: None,
        };
        3
    ]
}

/// Passive three-link chain with its base clamped to a side wall, pointing +x.
pub fn three_link_passive(pose: PassivePose) -> MechanismModel {
    let q = match pose {
        PassivePose::Horizontal => vec![0.0, 0.0, 0.0],
        PassivePose::RightAngle => vec![0.0, 0.0, FRAC_PI_2],
    };
    MechanismModel {
        schema_version: MODEL_SCHEMA_VERSION,
        base_pose: BasePose::default(),
        links: three_link_links(),
        joints: three_link_joints(),
        actuators: vec![],
        fluid: FluidEnv::WATER,
        initial_state: InitialState {
            q,
            qdot: vec![0.0; 3],
        },
    }
}

/// Hanging three-link chain with a velocity servo on the first joint.
pub fn three_link_active(pose: ActivePose) -> MechanismModel {
    let q = match pose {
        ActivePose::Straight => vec![0.0, 0.0, 0.0],
        ActivePose::Bent => vec![FRAC_PI_4, -FRAC_PI_4, 0.0],
    };
    MechanismModel {
        schema_version: MODEL_SCHEMA_VERSION,
        base_pose: BasePose {
            x: 0.0,
            y: 0.0,
            theta: -FRAC_PI_2,
        },
        links: three_link_links(),
        joints: three_link_joints(),
        actuators: vec![ActuatorSpec {
            joint_index: 0,
            kind: ActuatorKind::VelocityServo,
            kv: 0.03,
            force_range: (-0.03, 0.03),
            schedule: two_to_one_schedule(6.0, 0.3, 2),
        }],
        fluid: FluidEnv::WATER,
        initial_state: InitialState {
            q,
            qdot: vec![0.0; 3],
        },
    }
}

pub const ARM_SEGMENTS: usize = 8;

/// Eight-segment tapered arm hanging from a servo-driven root joint.
pub fn octopus_arm() -> MechanismModel {
    let links: Vec<LinkSpec> = (0..ARM_SEGMENTS)
        .map(|i| {
            let taper = i as f64 / (ARM_SEGMENTS - 1) as f64;
            ellipsoid_link(0.022, 0.004, 0.007 - 0.0035 * taper, 1100.0)
        })
        .collect();
    MechanismModel {
        schema_version: MODEL_SCHEMA_VERSION,
        base_pose: BasePose {
            x: 0.0,
            y: 0.0,
            theta: -FRAC_PI_2,
        },
        links,
        joints: vec![
            JointSpec {
                damping: 5.0e-6,
                friction_loss: 0.0,
                limits: None,
            };
            ARM_SEGMENTS
        ],
        actuators: vec![ActuatorSpec {
            joint_index: 0,
            kind: ActuatorKind::VelocityServo,
            kv: 0.05,
            force_range: (-0.05, 0.05),
            schedule: two_to_one_schedule(6.0, 0.3, 2),
        }],
        fluid: FluidEnv::WATER,
        initial_state: InitialState {
            q: vec![0.0; ARM_SEGMENTS],
            qdot: vec![0.0; ARM_SEGMENTS],
        },
    }
}

/// Ground-truth coefficients for synthetic experiments. Links differ so that
/// a shared-coefficient fit cannot reproduce the motion exactly.
pub fn reference_coeffs(n_links: usize) -> ParamVector {
    let base = [2.0, 1.2, 3.0, 0.6, 0.4];
    let coeffs: Vec<HydroCoeffs> = (0..n_links)
        .map(|i| {
            let f = 1.0 + 0.15 * ((i as f64) * 1.3).sin();
            HydroCoeffs::from_array(base.map(|c| c * f))
        })
        .collect();
    ParamVector::from_link_coeffs(&coeffs).expect("reference coefficients lie in bounds")
}

/// A named synthetic experiment: model, generating coefficients and timing.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub model: MechanismModel,
    pub truth: ParamVector,
    pub duration: f64,
    pub sample_rate: f64,
}

pub fn all() -> Vec<Scenario> {
    let three = |name, model| Scenario {
        name,
        model,
        truth: reference_coeffs(3),
        duration: 1.5,
        sample_rate: 50.0,
    };
    vec![
        three("passive_horizontal", three_link_passive(PassivePose::Horizontal)),
        three("passive_right_angle", three_link_passive(PassivePose::RightAngle)),
        Scenario {
            duration: 0.9,
            ..three("active_straight", three_link_active(ActivePose::Straight))
        },
        Scenario {
            duration: 0.9,
            ..three("active_bent", three_link_active(ActivePose::Bent))
        },
        Scenario {
            name: "octopus_arm",
            model: octopus_arm(),
            truth: reference_coeffs(ARM_SEGMENTS),
            duration: 0.9,
            sample_rate: 50.0,
        },
    ]
}

pub fn by_name(name: &str) -> Option<Scenario> {
    all().into_iter().find(|s| s.name == name)
}
