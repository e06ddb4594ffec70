use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("dimension {dim} ({value}) is not divisible by factor {factor}")]
    NotDivisible {
        dim: &'static str,
        value: usize,
        factor: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("tape is stale: recorded for parameter revision {tape}, parameters are at revision {params}")]
    StaleTape { tape: u64, params: u64 },

    #[error("non-finite loss at {stage}: {detail}")]
    NonFiniteLoss { stage: String, detail: String },

    #[error("fusion diverged at t={t}, k={k}: fidelity={fidelity}, prior={prior}")]
    FusionDiverged {
        t: usize,
        k: usize,
        fidelity: f64,
        prior: f64,
        /// Estimate at the moment of failure, before the offending update.
        state: Box<crate::HyperCube>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
