use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid pixmap: {detail}")]
    Pixmap { path: PathBuf, detail: String },
    #[error("{path}:{line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("count mismatch in cell (domain {domain}, class {class}): manifest says {stored}, records give {recount}")]
    CountMismatch {
        domain: usize,
        class: usize,
        stored: u64,
        recount: u64,
    },
    #[error("unknown domain {domain} (dataset has {domains})")]
    UnknownDomain { domain: usize, domains: usize },
    #[error("batch size {batch} exceeds dataset size {len}")]
    BatchTooLarge { batch: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] deco_core::TensorError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
