//! Dual-level interest learning for group identification.
//!
//! Given user–item, group–item and user–group interaction histories, this
//! crate learns two representations per user and group — a group-level one
//! from a user–group hypergraph and an item-level one from two attention
//! networks over the interaction bipartite graphs — aligns them with
//! contrastive objectives, and ranks candidate groups per user.
//!
//! The building blocks live in their own modules:
//!
//! - [`tensor`]: dense f64 tensors, CSR sparse matrices, and a reverse-mode
//!   differentiation tape,
//! - [`graph`]: hypergraph propagation operator and bipartite edge lists,
//! - [`data`]: ingestion, splitting, triplet sampling, synthetic data,
//! - [`model`]: parameters and the forward pass,
//! - [`loss`]: ranking, contrastive and joint objectives,
//! - [`train`] / [`eval`]: the optimization loop and ranking metrics,
//! - [`checkpoint`]: binary parameter serialization,
//! - [`selfcheck`]: runtime verification of the numerical core.

pub mod data;
pub mod graph;
pub mod eval;
pub mod loss;
pub mod model;
pub mod selfcheck;
pub mod train;

pub mod checkpoint;
pub mod error;

pub mod tensor;

pub use error::{Error, Result};
