use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("feature file contains no samples")]
    EmptyFile,
    #[error("line {line}: expected {expected} features, found {found}")]
    RaggedDimensions { line: u64, expected: usize, found: usize },
    #[error("unknown feature format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("class {label} has {available} samples, an episode needs {needed}")]
    InsufficientPool { label: String, available: usize, needed: usize },
    #[error("store has {available} classes, an episode needs {needed}")]
    TooFewClasses { available: usize, needed: usize },
    #[error("task has no query samples")]
    MissingQuery,
    #[error("the db method needs --calibration or a synthetic source")]
    MissingCalibration,
    #[error("the oracle method needs a synthetic source")]
    OracleNeedsSynthetic,
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] shotcast_core::Error),
}

impl CliError {
    /// 3 for numerical failures inside the estimators, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
