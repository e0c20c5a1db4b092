use thiserror::Error;

/// Errors raised by the integrators, the history buffer and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("delay contract violated at t = {t}: delay evaluated to {delay}")]
    DelayContractViolation { t: f64, delay: f64 },

    #[error("query time {t} lies beyond the covered interval (coverage ends at {coverage_end})")]
    OutOfCoverage { t: f64, coverage_end: f64 },

    #[error(
        "stage iteration did not converge within {max_iter} iterations at t = {t} \
         (last increment {residual:e}); the step size is probably too large"
    )]
    StageIterationDivergence {
        t: f64,
        max_iter: usize,
        residual: f64,
    },

    #[error("breakpoint localization failed on the bracket ({lo}, {hi})")]
    LocalizationFailure { lo: f64, hi: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed dump file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
