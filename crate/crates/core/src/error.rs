use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{field}` = {value} is outside [{min}, {max}]")]
    OutOfBounds {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("division by zero: {0}")]
    ZeroNorm(&'static str),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

    #[error("regime mix infeasible: {0}")]
    InfeasibleMix(String),

    #[error("cluster {label} has {size} training samples; reduce k")]
    ClusterTooSmall { label: usize, size: usize },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the numbers themselves rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::ZeroNorm(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
