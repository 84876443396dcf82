//! Minimal reverse-mode differentiable-computation layer: dense f64
//! tensors, a computation tape, gradient checking, and optimizers.

pub mod check;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{OptimConfig, OptimError, OptimKind, Optimizer, ParamState};
pub use tape::{sigmoid_scalar, Gradients, Tape, Var};
pub use tensor::Tensor;
