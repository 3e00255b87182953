//! Synthetic multi-domain fundus-like datasets: rendering, P6 storage,
//! manifests, domain splits and cross-domain paired batching.

pub mod batch;
pub mod dataset;
pub mod error;
pub mod generate;
pub mod manifest;
pub mod ppm;
pub mod render;
pub mod split;

pub use batch::{pair_partners, Batch, BatchIterator};
pub use dataset::{load_dataset, Dataset};
pub use error::{DataError, Result};
pub use generate::{domain_specs, generate_dataset, GeneratorConfig, ImbalanceProfile};
pub use manifest::{Manifest, SampleRecord};
pub use split::{split_leave_one_domain_out, split_single_source, Split};
