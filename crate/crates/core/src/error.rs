use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        /// 1-based, counting the header as row 1.
        row: usize,
        /// 1-based.
        column: usize,
        message: String,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("protocol violation: {}", format_violations(.0))]
    Protocol(Vec<Violation>),

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

/// A single reason an annotation batch was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The id was not part of the pending query batch.
    NotQueried { excerpt_id: String },
    /// The id already carries an annotation in this session.
    AlreadyAnnotated { excerpt_id: String },
    /// The id appears more than once in the submitted batch.
    Duplicate { excerpt_id: String },
    /// Pending ids that received no label.
    Missing { excerpt_ids: Vec<String> },
    /// No batch is awaiting annotations.
    NoPendingBatch,
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| match v {
            Violation::NotQueried { excerpt_id } => format!("`{excerpt_id}` was not queried"),
            Violation::AlreadyAnnotated { excerpt_id } => {
                format!("`{excerpt_id}` is already annotated")
            }
            Violation::Duplicate { excerpt_id } => format!("`{excerpt_id}` appears twice"),
            Violation::Missing { excerpt_ids } => format!("missing labels for {excerpt_ids:?}"),
            Violation::NoPendingBatch => "no batch is pending".to_string(),
        })
        .collect::<Vec<_>>()
        .join("; ")
}
