use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    /// Missing or corrupt dataset files.
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss or parameter.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] dpsgd_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 data, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use dpsgd_core::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Core(E::Config(_) | E::Input(_)) => 2,
            HarnessError::Data(_) | HarnessError::Core(E::Format(_) | E::Io { .. }) => 3,
            HarnessError::Numerical(_) => 4,
            HarnessError::Core(E::Dimension(_)) | HarnessError::Io { .. } | HarnessError::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
