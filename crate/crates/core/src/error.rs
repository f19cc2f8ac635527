use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("unknown density `{0}`")]
    UnknownDensity(String),
    #[error("parameter `{name}` = {value} out of range: {reason}")]
    Parameter {
        name: String,
        value: f64,
        reason: String,
    },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("exchange amount {z} exceeds source mass {x}")]
    ExchangeExceedsSource { x: f64, z: f64 },
    #[error("kernel `{0}` is non-zero for exchange amounts larger than the source mass")]
    KernelSupport(String),
    #[error("absorbing state: total jump rate is zero")]
    Absorbing,
    #[error("state space has {count} states, above the guard of {limit}")]
    StateSpaceTooLarge { count: usize, limit: usize },
    #[error("step size control failed at t = {t}: {reason}")]
    StepControl { t: f64, reason: String },
    #[error("insufficient checkpoint density: {0}")]
    Checkpoints(String),
    #[error("boundary leak {leak:e} exceeds tolerance {tolerance:e}")]
    BoundaryLeak { leak: f64, tolerance: f64 },
    #[error("kernel `{0}` fails the derivative/boundary check; refusing to certify")]
    KernelNotCompliant(String),
    #[error("grid too short: {0}")]
    GridTooShort(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err(name: &str, value: f64, reason: &str) -> Error {
    Error::Parameter {
        name: name.to_string(),
        value,
        reason: reason.to_string(),
    }
}
