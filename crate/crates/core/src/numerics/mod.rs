//! Tensor substrate: dense tensors, differentiable ops and gradient verification.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
pub use graph::{BufferUpdate, Gradients, Graph, Mode, Var, BN_EPS, BN_MOMENTUM, LOG_CLAMP};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
