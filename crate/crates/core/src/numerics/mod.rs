//! Differentiable numerical core: tensors, reverse-mode graph, optimiser,
//! learning-rate schedule and the finite-difference oracle.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{AttentionShape, Gradients, Graph, NodeId};
pub use optim::{adam_step, clip_grad_norm, global_norm, lr_at, AdamState, LrSchedule};
pub use params::{ParamId, ParamSet};
pub use real::Real;
pub use tensor::Tensor;

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-12;
