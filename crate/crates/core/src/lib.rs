//! Numeric core and representation-level building blocks for domain
//! generalization by feature disentanglement.
//!
//! - [`tensor`], [`conv`], [`graph`]: dense `f64` tensors and a tape-based
//!   reverse-mode engine over the operations the pipeline needs.
//! - [`rng`]: seeded xoshiro256** with Gamma/Beta sampling.
//! - [`disentangle`]: instance-normalized content vs. spatial statistics.
//! - [`prototypes`]: class/domain prototype banks and data-aware weights.
//! - [`model`]: a small conv backbone with an insertion layer.
//! - [`loss`]: cross-entropy and the contrastive semantic alignment term.

pub mod conv;
pub mod disentangle;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod model;
pub mod loss;
pub mod prototypes;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use rng::SeededRng;
pub use tensor::Tensor;
