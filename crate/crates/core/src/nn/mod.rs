//! Hand-differentiated building blocks.
//!
//! Every layer pairs a forward pass that returns a cache with a backward pass
//! that consumes it, accumulates parameter gradients, and returns the
//! gradient with respect to the layer input.

mod activation;
mod batchnorm;
mod linear;
mod mlp;
pub(crate) mod module;

pub use activation::{relu, relu_backward, softplus, softplus_backward, softplus_grad, SOFTPLUS_THRESHOLD};
pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use linear::Linear;
pub use mlp::{Mlp, MlpCache, MlpSpec, OutputActivation};
pub use module::{Module, TensorKind, TensorMut};

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
