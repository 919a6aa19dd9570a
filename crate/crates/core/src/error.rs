use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numeric failure in {site}")]
    NumericFailure { site: String },

    #[error("no model available for {} window(s): {}", ids.len(), list_ids(ids))]
    Routing { ids: Vec<String> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

const LISTED_IDS: usize = 8;

fn list_ids(ids: &[String]) -> String {
    let mut out = ids.iter().take(LISTED_IDS).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > LISTED_IDS {
        out.push_str(&format!(", ... and {} more", ids.len() - LISTED_IDS));
    }
    out
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(site: impl Into<String>) -> Self {
        Error::NumericFailure { site: site.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
