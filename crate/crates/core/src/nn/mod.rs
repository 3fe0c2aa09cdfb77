//! Dense numerical core: layers with hand-derived gradients, softmax
//! cross-entropy, optimizers and a finite-difference gradient checker.
//!
//! Everything is `f64`. Batches are `[n, d]` tensors. Parameter gradients are
//! accumulated example by example in index order (each example's contribution
//! to a parameter is formed locally, then added once), so the gradient of a
//! batch is bit-identical to the in-order sum of single-example gradients.
//! The DPSGD baseline relies on that property.

pub mod circulant;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;

pub use circulant::{circulant_matrix, circulant_matvec, circulant_matvec_fft};
pub use gradcheck::finite_diff_check;
pub use layers::{
    backward_sequence, forward_sequence, layer_backward, layer_forward, Activation, BatchNorm,
    LayerCache, LayerParams, Mode,
};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use optim::{Algorithm, OptimState};
