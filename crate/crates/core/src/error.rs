use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feasible set is empty at the given parameter")]
    InfeasibleSet,

    #[error("iterate became non-finite ({0})")]
    NonFiniteIterate(String),

    #[error("smoothing radius must be positive")]
    ZeroRadius,

    #[error("graph is disconnected")]
    DisconnectedGraph,

    #[error("invalid topology parameters: {0}")]
    InvalidTopologyParams(String),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("beta = {beta} outside the admissible interval (0, {upper})")]
    InvalidBeta { beta: f64, upper: f64 },

    #[error("negative discriminant while computing {0}")]
    NegativeDiscriminant(&'static str),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {message}")]
    Range { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn range(field: &str, message: impl Into<String>) -> Self {
        Error::Range {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Parse(_) | Error::Range { .. })
    }
}
