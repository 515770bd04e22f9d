use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point {point:?} is not strictly inside the chart")]
    OutsideChart { point: Vec<f64> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metric is not symmetric positive-definite at {point:?}")]
    NotPositiveDefinite { point: Vec<f64> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("antisymmetry violated at c[{i}][{j}][{k}]")]
    NotAntisymmetric { i: usize, j: usize, k: usize },

    #[error("Jacobi identity residual {residual:e} exceeds tolerance {tol:e}")]
    Jacobi { residual: f64, tol: f64 },

    #[error("matrix logarithm: spectral radius of g - I is {radius}, outside the convergence region")]
    LogOutsideRegion { radius: f64 },

    #[error("matrix is not in the span of the generators (residual {residual:e})")]
    NotInSpan { residual: f64 },

    #[error("integration failed: {0}")]
    Ode(String),

    #[error("path leaves the atlas: {0}")]
    PathExitsAtlas(String),

    #[error("flatness violated: path-dependence residual {residual:e}")]
    FlatnessViolation { residual: f64 },

    #[error("anchor is rank-deficient along the path (smallest singular value {sigma:e})")]
    RankDeficient { sigma: f64 },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("unknown catalog name `{0}`")]
    UnknownCatalog(String),
}

pub type Result<T> = std::result::Result<T, Error>;
