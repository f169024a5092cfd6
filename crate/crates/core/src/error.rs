use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum HomError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no children below unit scale")]
    NoChildren,

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("cell {cell}: symmetric part is not positive definite ({reason})")]
    NotSpd { cell: usize, reason: String },

    #[error("cell {cell}: skew part is not skew-symmetric")]
    NotSkew { cell: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("iterative solver stalled: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("degenerate lower block (min eigenvalue {min_eig:e}, trace {trace:e})")]
    DegenerateLowerBlock { min_eig: f64, trace: f64 },

    #[error("numerical check failed: {0}")]
    Check(String),

    #[error("missing cube in cache: {0}")]
    MissingCube(String),

    #[error("cascade overflow: {0}")]
    Overflow(String),

    #[error("sample {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<HomError>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HomError>;

impl HomError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HomError::InvalidArgument(msg.into())
    }

    pub(crate) fn check(msg: impl Into<String>) -> Self {
        HomError::Check(msg.into())
    }

    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HomError::InvalidArgument(_) | HomError::Config(_) | HomError::Format(_)
        )
    }
}
