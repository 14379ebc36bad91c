//! Numeric substrate: dense matrices, MLPs with manual backprop, optimizers,
//! gradient checking and the binary parameter checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Activation, Backward, ForwardCache, Gradients, Layer, MlpParams};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
