use thiserror::Error;

/// Errors raised by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid horizon: {0} (must be at least 1)")]
    InvalidHorizon(usize),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid direction: support query needs a finite nonzero vector")]
    InvalidDirection,
    #[error("invalid reach step {0}: reachable sets are defined for 1 <= k <= horizon")]
    InvalidStep(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario space exhausted: {0}")]
    ScenarioSpace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
