use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate weights: total weight {total:e} is below {threshold:e}")]
    DegenerateWeights { total: f64, threshold: f64 },

    /// A monomial of the objective cannot be produced by any term of the
    /// relaxation's right-hand side, so coefficient matching is impossible.
    #[error("infeasible relaxation structure: objective monomial {monomial} is not representable")]
    InfeasibleStructure { monomial: String },

    #[error("candidate extraction degenerate: constant-monomial entry {pivot:e} of the null vector is too small")]
    ExtractionDegenerate { pivot: f64 },

    #[error("rotation projection degenerate: smallest singular value {smallest:e}")]
    ProjectionDegenerate { smallest: f64 },

    #[error("sdp solve failed: {0}")]
    Solver(String),

    #[error("{path}: invalid field `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
