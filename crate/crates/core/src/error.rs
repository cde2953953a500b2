use thiserror::Error;

/// Errors raised by the model, solver, diagnostics and estimate checkers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value} is outside {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("no samples inside {0}")]
    EmptySample(String),

    #[error("step rejected: density {value} at cell {cell} leaves [0, {rho_max}]")]
    BoundViolation {
        cell: usize,
        value: f64,
        rho_max: f64,
    },

    #[error("solver aborted at t = {time}: {reason}")]
    Abort { time: f64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64, range: impl Into<String>) -> Error {
    Error::Domain {
        what,
        value,
        range: range.into(),
    }
}
