use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ensemble must contain at least one replica")]
    EmptyEnsemble,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {time} is not aligned with the grid (dt = {dt})")]
    Alignment { time: f64, dt: f64 },
    #[error("non-finite state after grid step {step}")]
    Divergence { step: i64 },
    #[error("capability missing: {0}")]
    Capability(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("pullback did not reach tolerance after {} depths (last gap {:e})", gaps.len() + 1, gaps.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { gaps: Vec<f64> },
    #[error("singular: {0}")]
    Singular(String),
    #[error("replica {replica}: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
