use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by parsing, metric computation and report assembly.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{path}:{line}: malformed line: {text}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("{path}:{line}: non-finite score `{text}`")]
    NonFiniteScore {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("{path}: file contains no trials")]
    EmptyFile { path: PathBuf },

    #[error("{path}: missing header row (expected first column `speaker_id`)")]
    MissingHeader { path: PathBuf },

    #[error("{path}:{line}: duplicate speaker id `{id}`")]
    DuplicateSpeaker {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("utterance id `{0}` does not resolve to a speaker under the current rule")]
    UnresolvableSpeaker(String),

    #[error("every trial fell into the unknown bucket; check metadata and attribute names")]
    AllUnknown,

    #[error("no {side} trials")]
    EmptyScoreSide { side: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("report schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AuditError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }
}
