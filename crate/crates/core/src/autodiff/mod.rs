//! Minimal reverse-mode differentiation over dense `f32` tensors.
//!
//! A [`Graph`] records every executed op; [`Graph::backward`] walks the tape
//! in reverse once and leaves gradients on each node that requires one.
//! Parameters live in a [`ParamStore`] and are copied onto the graph as
//! leaves, so a graph never borrows model state.

mod conv;
mod graph;
pub(crate) mod kernels;
mod norm;
mod optim;
mod tensor;

pub use graph::{Graph, Var};
pub use norm::{BatchMoments, BnMode, RunningStats, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use optim::{AdamConfig, AdamState, ParamId, ParamStore};
pub use tensor::Tensor;
