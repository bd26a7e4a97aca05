//! The surrogate: convolutional encoder, latent ODE right-hand side with
//! parameter conditioning, explicit Runge-Kutta processor, decoder.

mod butcher;
mod checkpoint;
mod config;
mod network;
mod params;
mod processor;
mod surrogate;

pub use butcher::ButcherTableau;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{Conditioning, ModelConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use processor::rk_step_var;
pub use surrogate::{LatentState, SurrogateModel};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter vector has length {got}, model expects {expected}")]
    ParamDim { expected: usize, got: usize },
    #[error("time step must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("rollout diverged at step {step}: latent norm {norm:e} exceeds the bound")]
    Divergence { step: usize, norm: f64 },
}
