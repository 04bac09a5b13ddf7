//! Dense tensors, reverse-mode differentiation, initialization, Adam,
//! global-norm clipping and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{adam_step, clip_global_norm, OptimizerState};
pub use params::{init_parameters, Gradients, ParamId, ParamKind, ParamStore, Parameter};
pub use tensor::{Real, Tensor};
