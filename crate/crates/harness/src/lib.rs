//! Training, evaluation, protocol drivers and result persistence.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod optim;
pub mod protocol;
pub mod report;
pub mod train;

pub use config::{ExperimentConfig, Protocol};
pub use error::{HarnessError, Result};
pub use metrics::Metrics;
pub use protocol::{run_ablation, run_protocol, ProtocolReport, RunOptions};
pub use train::{evaluate, train, TrainedModel};
