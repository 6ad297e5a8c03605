use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("steady-state solver failed: {0}")]
    SolverFailure(String),

    #[error("root finding failed: {reason} (residual {residual:e})")]
    RootFinding { reason: String, residual: f64 },

    #[error("no spectrum points inside window [{lo}, {hi}] MHz")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("trajectory diverged at t = {t} us: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
