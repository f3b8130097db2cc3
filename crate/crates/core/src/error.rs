use thiserror::Error;

use crate::estimation::XEstimate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("average SNR is undefined for a noiseless channel")]
    UndefinedSnr,

    #[error("singular measurement design: {0}")]
    SingularDesign(String),

    /// Both sinusoidal components of the estimate vanished, so the optimal
    /// shift is undefined.
    #[error("ambiguous phase: (x2, x3) = (0, 0)")]
    AmbiguousPhase,

    #[error("NAP is undefined for an all-zero channel")]
    UndefinedNap,

    #[error("ML solver did not converge after {iterations} iterations")]
    SolverFailure {
        iterations: usize,
        best: XEstimate,
    },

    #[error("search space |Omega|^N = {size} exceeds the limit {limit}")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),
}
