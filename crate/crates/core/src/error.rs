use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid Fock cutoff {0}: must be at least 2")]
    InvalidCutoff(usize),

    #[error("invalid Dicke basis: N = {n}, l_max = {l_max} (need 1 <= N and l_max <= N)")]
    InvalidDickeBasis { n: usize, l_max: usize },

    #[error("excitation number l = {l} out of range for N = {n}")]
    ExcitationOutOfRange { n: usize, l: usize },

    #[error("total dimension {dim} exceeds the configured limit {limit}")]
    DimensionOverflow { dim: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mode set: {0}")]
    InvalidModeSet(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("integration diverged at step {step} (t = {time}): {reason}")]
    IntegrationDiverged { step: usize, time: f64, reason: String },

    #[error("no stationary state: {0}")]
    NoStationaryState(String),

    #[error("stationary state is not unique: {0}")]
    NonUniqueSteadyState(String),

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("moment closure is not exact on the probe set (residual {residual:e})")]
    ClosureResidual { residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
