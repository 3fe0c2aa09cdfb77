use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NoiseSource;
use crate::tensor::Tensor;

/// Clipping floor for the multiplicative strategy when none is given.
pub const DEFAULT_ETA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStrategy {
    None,
    /// `x + φ(Ux) + γn`, input `x⁰ = x + πn`.
    AdditiveI,
    /// `x + φ(Ux) + γ x̃ ⊙ n`, output `wᵀx^M + π‖x^M‖₂ n`.
    MultiplicativeII,
}

impl NoiseStrategy {
    pub fn name(self) -> &'static str {
        match self {
            NoiseStrategy::None => "none",
            NoiseStrategy::AdditiveI => "additive",
            NoiseStrategy::MultiplicativeII => "multiplicative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseStrategy::None),
            "additive" | "additive_i" | "i" => Ok(NoiseStrategy::AdditiveI),
            "multiplicative" | "multiplicative_ii" | "ii" => Ok(NoiseStrategy::MultiplicativeII),
            other => Err(Error::Parse(format!("unknown noise strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub strategy: NoiseStrategy,
    /// Residual noise coefficient.
    pub gamma: f64,
    /// Input (additive) or output (multiplicative) noise coefficient.
    pub pi: f64,
    /// Clipping floor, multiplicative strategy only.
    pub eta: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            strategy: NoiseStrategy::None,
            gamma: 0.0,
            pi: 0.0,
            eta: DEFAULT_ETA,
        }
    }

    /// Additive noise with the input coefficient tied to `π = γ/2`.
    pub fn additive(gamma: f64) -> Self {
        Self::additive_with(gamma, gamma / 2.0)
    }

    pub fn additive_with(gamma: f64, pi: f64) -> Self {
        Self {
            strategy: NoiseStrategy::AdditiveI,
            gamma,
            pi,
            eta: DEFAULT_ETA,
        }
    }

    pub fn multiplicative(gamma: f64, pi: f64) -> Self {
        Self {
            strategy: NoiseStrategy::MultiplicativeII,
            gamma,
            pi,
            eta: DEFAULT_ETA,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.pi >= 0.0 && self.pi.is_finite()) {
            return Err(Error::invalid("noise coefficients must be finite and nonnegative"));
        }
        match self.strategy {
            NoiseStrategy::None if self.gamma != 0.0 || self.pi != 0.0 => Err(Error::invalid(
                "strategy `none` requires gamma = pi = 0",
            )),
            NoiseStrategy::MultiplicativeII if !(self.eta > 0.0) => {
                Err(Error::invalid("multiplicative strategy requires eta > 0"))
            }
            _ => Ok(()),
        }
    }

    /// True when any forward pass draws noise.
    pub fn is_stochastic(&self) -> bool {
        self.strategy != NoiseStrategy::None && (self.gamma > 0.0 || self.pi > 0.0)
    }
}

/// `sgn(x_j)·max(|x_j|, η)` with `sgn(0) = +1`.
pub fn clip_away_from_zero(x: &[f64], eta: f64) -> Vec<f64> {
    x.iter().map(|&v| clip_scalar(v, eta)).collect()
}

#[inline]
pub(crate) fn clip_scalar(v: f64, eta: f64) -> f64 {
    let mag = v.abs().max(eta);
    if v < 0.0 {
        -mag
    } else {
        mag
    }
}

/// `x + π·n` with a fresh standard-normal `n`.
pub fn input_perturb(x: &Tensor, pi: f64, noise: &mut dyn NoiseSource) -> Tensor {
    let mut out = x.clone();
    if pi == 0.0 {
        return out;
    }
    let mut n = vec![0.0; x.len()];
    noise.fill_standard_normal(&mut n);
    for (o, z) in out.data_mut().iter_mut().zip(&n) {
        *o += pi * z;
    }
    out
}
