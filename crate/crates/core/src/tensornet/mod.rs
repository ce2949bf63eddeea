//! Minimal differentiable computation core.
//!
//! A fixed operator set on double-precision tensors, reverse-mode gradients,
//! the gradient-reversal transform, Adam/SGD, a finite-difference gradient
//! checker and binary checkpoints.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, NodeId};
pub use graph::{bce_term, log_sum_exp, sigmoid, softmax_in_place};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{init_uniform, ParamSet};
pub use tensor::Tensor;
