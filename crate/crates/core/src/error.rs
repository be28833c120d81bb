use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported tensor file.
    #[error("format error in {path:?}: {msg}")]
    Format { path: Option<PathBuf>, msg: String },

    /// A value violates a data invariant; `index` is the first offending
    /// element in row-major (row, col) order.
    #[error("data error at {index:?}: {msg}")]
    Data { index: (usize, usize), msg: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// A resampling target has no source sample within the kernel support.
    #[error("no sample within {radius_s} s of target time {target_s} s")]
    Coverage { target_s: f64, radius_s: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("roi error: {0}")]
    Roi(String),

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path:?}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input data rather than by
    /// configuration or missing files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Data { .. }
                | Error::Coverage { .. }
                | Error::Degenerate(_)
                | Error::Roi(_)
                | Error::Input(_)
        )
    }
}
