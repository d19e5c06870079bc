use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no complex-conjugate pole pair (over-damped or degenerate model)")]
    NoComplexRoot,

    #[error("goodness of fit undefined: actual signal is constant")]
    UndefinedGof,

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("correlation undefined: zero rank variance")]
    UndefinedCorrelation,

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("cannot build {folds} folds: smallest class has {class_count} samples")]
    FoldInfeasible { class_count: usize, folds: usize },

    #[error("SMO did not converge after {iterations} iterations (max KKT violation {violation:.3e})")]
    SmoNonConvergence { iterations: usize, violation: f64 },

    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: missing header field `{field}`", path.display())]
    MissingField { path: PathBuf, field: String },

    #[error("invalid trial: {0}")]
    InvalidTrial(String),

    #[error("duplicate trial key `{0}`")]
    DuplicateTrial(String),

    #[error("no trials found in {}", .0.display())]
    EmptySet(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("insufficient rows: {available} available, {required} required")]
    InsufficientRows { available: usize, required: usize },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether this error stems from bad usage or configuration rather than
    /// from the data or the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::MissingArtifact(_))
    }
}
