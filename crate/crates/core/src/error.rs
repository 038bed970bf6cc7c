use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure modes of each
/// subsystem so callers can match on what actually went wrong.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A CTC target that no alignment of the given length can produce.
    /// Hard error during training; pure likelihood queries return -inf instead.
    #[error("infeasible CTC target: need at least {needed} frames, have {frames}")]
    InfeasibleTarget { frames: usize, needed: usize },

    #[error("enumeration bounds exceeded: {0}")]
    Bounds(String),

    #[error("missing state: {0}")]
    State(String),

    #[error("input too short: need at least {needed} frames, got {got}")]
    InputTooShort { got: usize, needed: usize },

    #[error("empty target: {0}")]
    EmptyTarget(String),

    #[error("training diverged at step {step}: loss became non-finite")]
    TrainingDiverged { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("characters outside vocabulary: {offenders:?}")]
    Vocab { offenders: Vec<char> },

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
