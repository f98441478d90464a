use thiserror::Error;

/// Errors produced by the closure pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Array shapes disagree with the declared model dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A trajectory became non-finite or exceeded the blow-up threshold.
    #[error("trajectory blew up at step {step}")]
    BlowUp { step: usize },

    /// Too many ensemble members blew up to report honest scores.
    #[error("{failed} of {total} ensemble members blew up")]
    EnsembleBlowUp { failed: usize, total: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The regression design has (numerically) dependent columns.
    #[error("rank-deficient design, dependent terms: {}", .terms.join(", "))]
    RankDeficient { terms: Vec<String> },

    /// Data without the variability an estimator needs.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition was not met by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
