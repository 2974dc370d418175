use thiserror::Error;

use crate::evaluation::EvalError;
use crate::generation::GenerationError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::review::ReviewError;
use crate::tagged::TaggedError;

/// Every domain error reachable from the library surface. [`Error::name`]
/// is the stable taxonomy name printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("line {line}: field `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("stage {0} has no samples")]
    EmptyStage(String),
    #[error("{count} invalid record(s) in {path}")]
    ValidationFailed { path: String, count: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tagged(#[from] TaggedError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Review(#[from] ReviewError),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::StoreUnavailable(_) => "StoreUnavailable",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::DuplicateId(_) => "DuplicateId",
            Error::EmptyStage(_) => "EmptyStage",
            Error::ValidationFailed { .. } => "ValidationFailed",
            Error::Config(_) => "ConfigError",
            Error::Tagged(e) => e.name(),
            Error::Generation(e) => e.name(),
            Error::Eval(EvalError::Config(_)) => "ConfigError",
            Error::Eval(EvalError::JudgeUnavailable(_)) => "JudgeUnavailable",
            Error::Metrics(e) => e.name(),
            Error::Model(e) => match e {
                ModelError::IllegalTransition { .. } => "IllegalTransition",
                ModelError::MissingReview => "MissingReview",
                ModelError::InvalidDecision(_) => "InvalidDecision",
                _ => "SchemaViolation",
            },
            Error::Review(e) => e.name(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::StoreUnavailable(format!("{}: {err}", path.display()))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
