use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds: lower {lower} must be finite and strictly below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("space must have at least one model and one layer (got {n_models} x {n_layers})")]
    ZeroDimension { n_models: usize, n_layers: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("evaluator failure: {0}")]
    EvaluatorFailure(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("ranked population has {got} entries, expected {expected}")]
    RankSizeMismatch { expected: usize, got: usize },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("empty logs")]
    EmptyLogs,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error originates from an objective evaluation rather than
    /// from configuration or IO.
    pub fn is_evaluator_failure(&self) -> bool {
        matches!(self, Error::EvaluatorFailure(_))
    }
}
