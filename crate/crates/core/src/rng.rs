//! Seeded random streams and the noise-source abstraction used by every
//! stochastic forward pass.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer; mixes a (seed, tag) pair into an independent seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for the stream `(seed, tag)`.
pub fn stream(seed: u64, tag: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tag))
}

/// Named sub-streams. Keeping these separate means, e.g., that turning DP noise
/// on or off never perturbs the minibatch order.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const FORWARD_NOISE: u64 = 3;
    pub const EVAL_NOISE: u64 = 4;
    pub const DP_NOISE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const ATTACK: u64 = 7;
    pub const MEMBER_BASE: u64 = 1_000;
}

/// Source of standard-normal draws for noise injection.
///
/// Live generators implement this through the blanket impl; [`RecordingNoise`]
/// and [`ReplayNoise`] freeze a sequence of draws so a stochastic forward pass
/// can be repeated exactly (finite-difference checks).
pub trait NoiseSource {
    fn fill_standard_normal(&mut self, out: &mut [f64]);

    fn standard_normal(&mut self) -> f64 {
        let mut v = [0.0];
        self.fill_standard_normal(&mut v);
        v[0]
    }
}

impl<R: RngCore + ?Sized> NoiseSource for R {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(self);
        }
    }
}

/// Wraps a live source and keeps every draw.
pub struct RecordingNoise<'a> {
    inner: &'a mut dyn NoiseSource,
    pub draws: Vec<f64>,
}

impl<'a> RecordingNoise<'a> {
    pub fn new(inner: &'a mut dyn NoiseSource) -> Self {
        Self {
            inner,
            draws: Vec::new(),
        }
    }
}

impl NoiseSource for RecordingNoise<'_> {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        self.inner.fill_standard_normal(out);
        self.draws.extend_from_slice(out);
    }
}

/// Replays a recorded sequence; panics if more draws are requested than recorded.
pub struct ReplayNoise<'a> {
    draws: &'a [f64],
    pos: usize,
}

impl<'a> ReplayNoise<'a> {
    pub fn new(draws: &'a [f64]) -> Self {
        Self { draws, pos: 0 }
    }
}

impl NoiseSource for ReplayNoise<'_> {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        let end = self.pos + out.len();
        assert!(end <= self.draws.len(), "replay exhausted recorded noise");
        out.copy_from_slice(&self.draws[self.pos..end]);
        self.pos = end;
    }
}

/// Source that never draws; any request is a logic error.
pub struct NoNoise;

impl NoiseSource for NoNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        assert!(out.is_empty(), "noise requested from a deterministic context");
    }
}
