//! Residual networks with noise injected into every residual mapping, in both
//! training and inference.
//!
//! A block computes `x ↦ x + φ(Ux) + ξ` where `φ = BN ∘ ψ`, `U` is dense or
//! circulant, and the injected term `ξ` is
//!
//! - `γ·n` for the additive strategy (plus `π·n` on the input),
//! - `γ·x̃ ⊙ n` for the multiplicative strategy, with `x̃` the input clipped
//!   away from zero at `η` (plus scalar output noise of scale `π‖x^M‖₂`).

mod checkpoint;
mod ensemble;
mod net;
mod noise;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use ensemble::{ensemble_predict, Classifier, EnsembleModel};
pub use net::{residual_block_forward, ArchConfig, BlockCache, Mixing, NetCache, ResidualNet};
pub use noise::{clip_away_from_zero, input_perturb, NoiseConfig, NoiseStrategy, DEFAULT_ETA};
pub use train::{
    accuracy, learning_rate_at, run_epochs, train, train_ensemble, EpochRecord, History, TrainConfig,
};
