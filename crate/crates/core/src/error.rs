use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes disagree along a named axis.
    #[error("dimension error in {context}: {detail}")]
    Dimension { context: String, detail: String },

    #[error("numeric error in {context}: non-finite value at flat index {index}")]
    NonFinite { context: String, index: usize },

    #[error("index error: {what} {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("infeasible grid: {0}")]
    InfeasibleGrid(String),

    #[error("transplant error at parameter `{param}`: {detail}")]
    Transplant { param: String, detail: String },

    #[error("format error in {file} at byte offset {offset}: {detail}")]
    Format {
        file: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config field `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error("subdomain {index} failed: {detail}")]
    Pipeline { index: usize, detail: String },

    #[error("report merge conflict for {key}: {detail}")]
    Merge { key: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 2 for invalid configuration or input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InfeasibleGrid(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
