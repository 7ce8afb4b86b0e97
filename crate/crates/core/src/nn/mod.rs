//! Numeric core: rank-4 tensors, convolution/pooling/activation kernels,
//! reverse-mode differentiation and the optimizer.

mod graph;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use ops::{Activation, ConvSpec, PoolKind};
pub use params::{Grads, Param, ParamStore};
pub use real::Real;
pub use tensor::{Shape, Tensor};
