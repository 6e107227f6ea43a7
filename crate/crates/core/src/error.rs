use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("expression error at (x={x}, t={t}): {source}")]
    EvalAt {
        x: f64,
        t: f64,
        #[source]
        source: ExprError,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("H3 enumeration needs n <= {max}, got n = {n}")]
    TooLarge { n: usize, max: usize },

    #[error("characteristic tracing failed: {0}")]
    Trace(String),

    #[error("time step {dt} exceeds the one-cell limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite value produced at t = {t}")]
    NonFinite { t: f64 },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("no numerical dichotomy: {0}")]
    NoDichotomy(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("found {found} of {wanted} roots below xi = {horizon}")]
    RootsNotFound {
        found: usize,
        wanted: usize,
        horizon: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Trace(_)
            | Error::Cfl { .. }
            | Error::NonFinite { .. }
            | Error::Eigen(_)
            | Error::NoDichotomy(_)
            | Error::Singular(_)
            | Error::RootsNotFound { .. }
            | Error::EvalAt { .. } => 2,
            Error::Expr(ExprError::Domain(_)) | Error::Expr(ExprError::Unbound(_)) => 2,
            Error::Expr(_)
            | Error::InvalidProblem(_)
            | Error::Config(_)
            | Error::TooLarge { .. }
            | Error::Io(_)
            | Error::Json(_) => 3,
        }
    }

    /// Short machine-readable kind, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Expr(ExprError::Syntax { .. }) => "syntax",
            Error::Expr(ExprError::UnknownFunction { .. }) => "unknown_function",
            Error::Expr(_) | Error::EvalAt { .. } => "evaluation",
            Error::InvalidProblem(_) => "invalid_problem",
            Error::Config(_) => "config",
            Error::TooLarge { .. } => "too_large",
            Error::Trace(_) => "trace",
            Error::Cfl { .. } => "cfl",
            Error::NonFinite { .. } => "non_finite",
            Error::Eigen(_) => "eigen",
            Error::NoDichotomy(_) => "no_dichotomy",
            Error::Singular(_) => "singular",
            Error::RootsNotFound { .. } => "roots_not_found",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
