use thiserror::Error;

/// Errors raised by the estimators, scoring rules and experiment engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("no convergence after {outer_iterations} outer / {inner_iterations} inner iterations: {reason}")]
    NonConvergence {
        outer_iterations: usize,
        inner_iterations: usize,
        reason: String,
    },

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("dispersion Hessian term vanishes (|denominator| = {0:e})")]
    DegenerateDenominator(f64),

    #[error("focus block Gram matrix is singular")]
    SingularFocusBlock,

    #[error("Sherman-Morrison-Woodbury denominator is zero ({0:e})")]
    SmwDenominatorZero(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },

    #[error("degenerate norm in spherical score")]
    DegenerateNorm,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
