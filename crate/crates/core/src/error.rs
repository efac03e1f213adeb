use thiserror::Error;

/// Errors produced by model construction, sampling, and reporting.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid distribution or model parameter (non-positive scale, p outside [0,1], ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Model family and dataset kind are incompatible, or a required prior is missing.
    #[error("model error: {0}")]
    Model(String),

    /// A parameter vector does not conform to the model layout.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// The MCMC engine detected divergence or a dead component.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// A convergence diagnostic could not be computed.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// A numerical routine failed (bracket expansion, non-convergence, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Importance weights too degenerate to trust; a direct refit is required.
    #[error("weight degeneracy: {0}")]
    WeightDegeneracy(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
}
