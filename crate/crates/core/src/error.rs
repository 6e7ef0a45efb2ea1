use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcaError>;

#[derive(Debug, Error)]
pub enum LcaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (failing pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular (min eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("degenerate metric: covariance is not invertible")]
    DegenerateMetric,

    #[error("unbounded objective: split matrices must both be invertible")]
    UnboundedObjective,

    #[error("degenerate Gaussian/Parzen split: transformation is not invertible")]
    DegenerateSplit,

    #[error("no Parzen dimensions in model")]
    NoParzenDimensions,

    #[error("all regularization values failed")]
    AllRegularizationsFailed,

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LcaError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LcaError::NotPositiveDefinite { .. }
                | LcaError::NotPsd { .. }
                | LcaError::Singular { .. }
                | LcaError::DegenerateMetric
                | LcaError::UnboundedObjective
                | LcaError::DegenerateSplit
                | LcaError::AllRegularizationsFailed
        )
    }
}
