use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("not enough samples: required {required}, available {available}")]
    Length { required: usize, available: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank error: requested {requested} components but data only supports {achievable}")]
    Rank { requested: usize, achievable: usize },

    #[error("solver did not converge within {iterations} iterations (KKT gap {gap:.3e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("scoring failed: {0}")]
    Scoring(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Position inside a text or binary input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable tag used in structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyInput(_) => "empty_input",
            Error::Length { .. } => "length",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::Degenerate(_) => "degenerate",
            Error::Rank { .. } => "rank",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Scoring(_) => "scoring",
            Error::Json(_) => "json",
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}
