use thiserror::Error;

/// Errors raised by the channel, estimation and bound computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pilot symbol at subcarrier {subcarrier} ({frequency} Hz) is zero")]
    DivisionByZero { subcarrier: usize, frequency: f64 },

    #[error("matrix is ill-conditioned (condition number {condition_number:.3e})")]
    IllConditioned { condition_number: f64 },

    #[error(
        "Fisher information matrix is ill-conditioned (condition number {condition_number:.3e}, most coupled paths {closest_pair:?})"
    )]
    IllConditionedFisher {
        condition_number: f64,
        closest_pair: Option<(usize, usize)>,
    },

    #[error("over-parameterized: {parameters} real parameters for {observations} observations")]
    OverParameterized {
        parameters: usize,
        observations: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
