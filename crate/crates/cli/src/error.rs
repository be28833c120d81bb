use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A stage ran without the outputs of a stage it depends on.
    #[error("stage {stage}: {msg}")]
    Stage { stage: &'static str, msg: String },

    #[error("stage {stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: braintools::Error,
    },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path:?}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Stage { .. } => EXIT_STAGE,
            CliError::Core {
                source: braintools::Error::Manifest(_),
                ..
            } => EXIT_CONFIG,
            CliError::Core { .. } | CliError::Io { .. } | CliError::Csv { .. } => EXIT_DATA,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn missing(stage: &'static str, prereq: &str, path: &std::path::Path) -> Self {
        CliError::Stage {
            stage,
            msg: format!("{prereq} outputs missing ({} not found)", path.display()),
        }
    }
}

/// Attaches the running stage to library errors.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for braintools::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
