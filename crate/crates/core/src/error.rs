use thiserror::Error;

/// Errors raised by the codec, the posterior, the exponent solver and the
/// control loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter violates its type invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tilt factors that would not keep the posterior normalized.
    #[error("tilt factors do not preserve normalization (resulting mass {mass})")]
    NonNormalizingTilt { mass: f64 },

    /// `d1 = d2 = 0`: the caller must use the deterministic edge mode.
    #[error("randomization undefined for d1 = d2 = 0")]
    DegenerateRandomization,

    /// The channel / budget pair admits no positive error exponent.
    #[error("no positive error exponent (p = {p}, budget = {budget:?})")]
    NoPositiveExponent { p: f64, budget: Option<u64> },

    /// Encoder and decoder disagree on the step protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The plant left the bounds assumed by the observer.
    #[error("model violation: {0}")]
    ModelViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
