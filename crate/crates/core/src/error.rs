//! Error types for every subsystem.

use std::path::PathBuf;

use thiserror::Error;

/// Failures while loading or interpreting configuration documents.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("mass matrix is numerically singular (condition estimate {condition:e})")]
    SingularMass { condition: f64 },
    #[error("simulation diverged at t = {t} s (|qdot| = {speed:e} rad/s)")]
    DivergedSimulation { t: f64, speed: f64 },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HydroError {
    #[error("direction vector has zero length")]
    ZeroDirection,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps not ascending at row {row}: {prev} then {next}")]
    NonMonotonicTime { row: usize, prev: f64, next: f64 },
    #[error("duplicate timestamp {t} at row {row}")]
    DuplicateTimestamp { row: usize, t: f64 },
    #[error("query time {t} outside recorded span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("polyline arc length {length:e} m is degenerate")]
    DegeneratePolyline { length: f64 },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestamps differ at row {row}: {a} vs {b}")]
    TimeMismatch { row: usize, a: f64, b: f64 },
    #[error("system length must be positive, got {0}")]
    InvalidLength(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaError {
    #[error("invalid CMA-ES configuration: {0}")]
    Config(String),
    #[error("covariance eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fitness {value} of candidate {index} is not finite")]
    NonFiniteFitness { index: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("invalid identification config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ConfigError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
