//! Multi-task learning with sparsely activated Mixture-of-Experts
//! transformer encoders.
//!
//! The encoder replaces each feed-forward sub-layer with either a dense
//! FFN, a MoE layer behind one shared gate, or a MoE layer with one gate
//! per task. Routing is top-1, so per-token FFN compute matches the dense
//! model regardless of the number of experts.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
