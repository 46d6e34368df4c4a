use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "integration accuracy: Bloch norm drifted by {drift:e} (limit {limit:e}); reduce the step"
    )]
    IntegrationAccuracy { drift: f64, limit: f64 },

    #[error(
        "capacity exceeded: {constraint}: requested {requested:e} s, available {available:e} s"
    )]
    Capacity {
        constraint: &'static str,
        requested: f64,
        available: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
