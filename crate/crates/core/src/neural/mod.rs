//! Dense 64-bit tensors, named parameter sets, optimizers, finite-difference
//! gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, rmsprop_step, OptimizerKind, OptimizerState};
pub use params::{init_params, GradSet, ParamId, ParamKind, ParamSet, ParamSpec};
pub use tensor::{axpy, dot, sigmoid, softplus, Tensor};
