//! Minimal reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]s. Differentiable computations are recorded on
//! a [`Tape`] through [`Var`] handles; [`Tape::backward`] returns the
//! [`Gradients`] of a scalar with respect to every node that requires them.
//!
//! ```
//! use latent_pde::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.var(Tensor::from_vec(vec![1.0, 2.0]));
//! let loss = w.mul(w).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod gradcheck;
mod init;
mod kernels;
mod tape;
mod tensor;

pub use init::{kaiming_uniform, kaiming_uniform_bound};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("unsupported attribute combination: {0}")]
    UnsupportedAttr(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("fan_in must be positive")]
    ZeroFanIn,
}
