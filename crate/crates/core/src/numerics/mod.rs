//! Dense tensors, reverse-mode differentiation, layers, and optimization.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{cosine_lr, AdamWConfig, OptimizerState};
pub use params::{GradMap, Graph, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
