use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: no records")]
    EmptyFile { path: PathBuf },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("score set is empty")]
    EmptySet,

    #[error("score set is not fully labelled")]
    Unlabelled,

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("AUC estimate unsupported: fewer than 2 valid ROC points")]
    AucUnsupported,

    #[error("{0} side of the prediction split is empty")]
    EmptySide(Side),

    #[error("validation {0} is undefined")]
    UndefinedValidationMetric(String),

    #[error("degenerate logits: all scores are identical")]
    DegenerateLogits,

    #[error("{0}")]
    Sampling(String),

    #[error("level {level}, repetition {repetition}: {source}")]
    Sweep {
        level: usize,
        repetition: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Which prediction side a learned quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Global,
    Positive,
    Negative,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Global => "global",
            Side::Positive => "positive",
            Side::Negative => "negative",
        })
    }
}
