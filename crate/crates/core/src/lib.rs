//! Residual perturbation for privacy-preserving residual networks.
//!
//! The crate is organized by subsystem:
//!
//! - [`nn`]: dense numerical core (tensors, layers, loss, optimizers, gradient checks)
//! - [`model`]: residual networks with additive or multiplicative noise injection,
//!   ensembles, training and checkpoints
//! - [`sde`]: forward/backward Euler(-Maruyama) propagation of images under a swirl field
//! - [`accountant`]: Rényi-DP ledger and noise calibration for both perturbation strategies
//! - [`attack`]: shadow-model membership inference and ROC/AUC evaluation
//! - [`dpsgd`]: per-example clipped, noised SGD baseline
//! - [`rademacher`]: closed-form Rademacher complexities with Monte-Carlo oracles
//! - [`harness`]: configuration, dataset ingestion, experiment orchestration and plots

pub mod accountant;
pub mod attack;
pub mod data;
pub mod dpsgd;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod rademacher;
pub mod rng;
pub mod sde;
pub mod tensor;

pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{EnsembleModel, NoiseConfig, NoiseStrategy, ResidualNet};
pub use rng::NoiseSource;
pub use tensor::Tensor;
