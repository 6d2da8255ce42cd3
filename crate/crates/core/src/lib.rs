//! Planar underwater multibody simulation with a five-coefficient per-link
//! hydrodynamic model, and box-constrained CMA-ES identification of those
//! coefficients from keypoint trajectories.

pub mod cmaes;
pub mod dynamics;
pub mod error;
pub mod hydro;
pub mod identify;
pub mod loss;
pub mod model;
pub mod scenarios;
pub mod trajectory;

#[cfg(feature = "cli")]
pub mod cli;

pub use cmaes::{CmaConfig, CmaState, StopReason};
pub use dynamics::{simulate, simulate_with, SimSettings, State};
pub use error::{CmaError, ConfigError, HydroError, IdentError, LossError, SimError, TrajectoryError};
pub use identify::{run_identification, synth_target, IdentConfig, IdentResult};
pub use model::{HydroCoeffs, MechanismModel, ParamVector};
pub use trajectory::Trajectory;
