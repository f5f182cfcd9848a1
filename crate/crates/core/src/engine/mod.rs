//! Tensors, reverse-mode autodiff, layers, losses, and the Adam optimizer.

pub mod gradcheck;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use models::{Architecture, CnnBaselineSpec, Network, UNetSpec, RESOLUTION};
pub use optim::{AdamConfig, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
