//! Dense tensors and a small reverse-mode differentiation engine.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod optim;
mod params;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
