use thiserror::Error;

/// Errors produced by the fitting and averaging pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample set: {0}")]
    InvalidSampleSet(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subset selector keeps no data points")]
    EmptyKeepSet,

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("damped normal equations are singular at every damping level")]
    SingularNormalEquations,

    #[error("Hessian is singular or not positive definite")]
    SingularHessian,

    #[error("invalid degrees of freedom: {0}")]
    InvalidDof(i64),

    #[error("criterion requires the bias-correction trace, which was not computed for `{0}`")]
    MissingTrace(String),

    #[error("model set is empty")]
    EmptyModelSet,

    #[error("weight records mix criteria")]
    MixedCriteria,

    #[error("parameter `{0}` is not present in every model")]
    MissingCommonParameter(String),

    #[error("no model passes the p-value threshold {0}")]
    NoQualifyingModels(f64),

    #[error("noise correlation matrix is not positive definite")]
    NonPositiveDefiniteCorrelation,

    #[error("invalid generator spec: {0}")]
    InvalidGenerator(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
