use thiserror::Error;

/// Errors raised by model construction, numerics, simulation and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid intensities: {0}")]
    InvalidIntensities(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("not defined for a critical model (beta = 1): {0}")]
    NotDefinedForCritical(&'static str),

    #[error("ODE integration failed at t = {t}: {reason}")]
    OdeFailure { t: f64, reason: String },

    #[error("truncation too severe: lost mass {mass:e} exceeds bound {bound:e} (j_max = {j_max})")]
    TruncationTooSevere { mass: f64, bound: f64, j_max: usize },

    #[error("normalization drift: total {total} deviates from 1 by more than {tol:e}")]
    NormalizationDrift { total: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state overflow: population exceeded cap {cap}")]
    StateOverflow { cap: u64 },

    #[error("time {time} outside trajectory range [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },

    #[error("estimator undefined at W(t) = 1")]
    UndefinedAtOne,

    #[error("all {0} replicates had W(t) = 1")]
    AllExcluded(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
