use std::path::PathBuf;

use catheter_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate scaler: channel {channel} has min {min} >= max {max}")]
    DegenerateScaler { channel: usize, min: f64, max: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("malformed trial file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| CoreError::Io {
            path: path.into(),
            source,
        })
    }
}
