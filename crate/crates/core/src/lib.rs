//! Latent neural-ODE surrogates for parametric, time-dependent PDEs.
//!
//! Solution fields are compressed by a convolutional autoencoder into a
//! low-dimensional latent vector whose evolution is governed by a learned,
//! parameter-conditioned ODE integrated with explicit Runge-Kutta steps.
//!
//! Modules:
//! - [`autodiff`]: reverse-mode differentiation over dense tensors.
//! - [`data`]: trajectory generators, normalization and the dataset container.
//! - [`model`]: encoder, latent dynamics, Runge-Kutta processor and decoder.
//! - [`training`]: loss terms, schedules, Adam and the training loop.
//! - [`eval`]: nRMSE metrics, time-refinement studies and ablations.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod training;
pub mod eval;
