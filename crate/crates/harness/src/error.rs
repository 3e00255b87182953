use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid checkpoint: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Tensor(#[from] deco_core::TensorError),
    #[error(transparent)]
    Prototype(#[from] deco_core::prototypes::PrototypeError),
    #[error(transparent)]
    Data(#[from] deco_data::DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
