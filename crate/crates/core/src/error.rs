use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("NonControllable: smallest Gramian eigenvalue {lambda_min:e} is below {tol:e}")]
    NonControllable { lambda_min: f64, tol: f64 },

    #[error("NonFinite: {0} produced NaN or infinite values")]
    NonFinite(&'static str),

    #[error("OutOfRange: time {t} is outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("SqrtFailure: matrix under square root has eigenvalue {eigenvalue:e}")]
    SqrtFailure { eigenvalue: f64 },

    #[error("BlowUp: Riccati solution exceeded {limit:e} at t = {t}")]
    BlowUp { t: f64, limit: f64 },

    #[error("Singular: {what} is numerically singular (condition number {cond:e})")]
    Singular { what: &'static str, cond: f64 },

    #[error("SingularGuard: M(1,t) condition number {cond:e} at t = {t} before the terminal clamp")]
    SingularGuard { t: f64, cond: f64 },

    #[error("EmptySupport: {0} has no mass")]
    EmptySupport(&'static str),

    #[error("MassMismatch: coupling marginal deviates by {deviation:e}")]
    MassMismatch { deviation: f64 },

    #[error("NotConverged: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),

    #[error("InvalidInput: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
