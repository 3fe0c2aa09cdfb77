use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::{clip_scalar, input_perturb, NoiseConfig, NoiseStrategy};
use crate::error::{Error, Result};
use crate::nn::{backward_sequence, forward_sequence, layer_backward, layer_forward, Activation, LayerCache, LayerParams, Mode};
use crate::rng::NoiseSource;
use crate::tensor::{l2_norm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    Dense,
    Circulant,
}

impl Mixing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Mixing::Dense),
            "circulant" => Ok(Mixing::Circulant),
            other => Err(Error::Parse(format!("unknown mixing layer `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mixing::Dense => "dense",
            Mixing::Circulant => "circulant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dim: usize,
    /// Number of residual blocks `M`.
    pub blocks: usize,
    /// Output rows of the head; 1 gives a scalar score.
    pub classes: usize,
    pub mixing: Mixing,
    pub activation: Activation,
    pub batch_norm: bool,
    /// `false` replaces `x + φ(Ux)` by `φ(Ux)` in every block.
    pub skip_connections: bool,
    /// Row-wise bound `a` on the head, enforced by projection after each step.
    pub head_norm_bound: Option<f64>,
}

impl ArchConfig {
    pub fn new(input_dim: usize, blocks: usize, classes: usize) -> Self {
        Self {
            input_dim,
            blocks,
            classes,
            mixing: Mixing::Dense,
            activation: Activation::Relu,
            batch_norm: true,
            skip_connections: true,
            head_norm_bound: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.blocks == 0 || self.classes == 0 {
            return Err(Error::invalid("input_dim, blocks and classes must all be at least 1"));
        }
        if let Some(a) = self.head_norm_bound {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("head_norm_bound must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Saved state of one residual block.
#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Tensor,
    layers: Vec<LayerCache>,
    /// Standard-normal draws of the multiplicative strategy.
    mult_draws: Option<Vec<f64>>,
}

/// Saved state of a full forward pass.
#[derive(Clone, Debug)]
pub struct NetCache {
    blocks: Vec<BlockCache>,
    head: LayerCache,
    final_state: Tensor,
    /// Scalar output-noise draws `[n·K]`, multiplicative strategy only.
    output_draws: Option<Vec<f64>>,
}

impl NetCache {
    /// Representation `x^M` fed to the head.
    pub fn final_state(&self) -> &Tensor {
        &self.final_state
    }
}

/// `x + φ(Ux) + ξ` for a batch `x` of shape `[n, d]`.
pub fn residual_block_forward(
    x: &Tensor,
    layers: &[LayerParams],
    noise: &NoiseConfig,
    skip_connections: bool,
    rng: &mut dyn NoiseSource,
    mode: Mode,
) -> Result<(Tensor, BlockCache)> {
    let (h, caches) = forward_sequence(layers, x, mode)?;
    if !h.same_shape(x) {
        return Err(Error::dim(format!(
            "residual mapping changes shape {:?} -> {:?}",
            x.shape(),
            h.shape()
        )));
    }
    let mut out = if skip_connections {
        let mut o = x.clone();
        for (a, b) in o.data_mut().iter_mut().zip(h.data()) {
            *a += b;
        }
        o
    } else {
        h
    };
    let mut mult_draws = None;
    if noise.gamma > 0.0 {
        let mut n = vec![0.0; x.len()];
        rng.fill_standard_normal(&mut n);
        match noise.strategy {
            NoiseStrategy::AdditiveI => {
                for (o, z) in out.data_mut().iter_mut().zip(&n) {
                    *o += noise.gamma * z;
                }
            }
            NoiseStrategy::MultiplicativeII => {
                for ((o, z), xv) in out.data_mut().iter_mut().zip(&n).zip(x.data()) {
                    *o += noise.gamma * clip_scalar(*xv, noise.eta) * z;
                }
                mult_draws = Some(n);
            }
            NoiseStrategy::None => {}
        }
    }
    Ok((
        out,
        BlockCache {
            input: x.clone(),
            layers: caches,
            mult_draws,
        },
    ))
}

fn residual_block_backward(
    layers: &[LayerParams],
    cache: &BlockCache,
    noise: &NoiseConfig,
    skip_connections: bool,
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (mut dx, grads) = backward_sequence(layers, &cache.layers, dy)?;
    if skip_connections {
        for (a, b) in dx.data_mut().iter_mut().zip(dy.data()) {
            *a += b;
        }
    }
    if let Some(n) = &cache.mult_draws {
        // d/dx of sgn(x)·max(|x|, η) is 1 above the floor and 0 below it.
        for (((a, g), z), xv) in dx.data_mut().iter_mut().zip(dy.data()).zip(n).zip(cache.input.data()) {
            if xv.abs() > noise.eta {
                *a += g * noise.gamma * z;
            }
        }
    }
    Ok((dx, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet {
    pub arch: ArchConfig,
    pub noise: NoiseConfig,
    /// Each block is `[mixing, activation, batch norm?]`.
    pub blocks: Vec<Vec<LayerParams>>,
    /// Bias-free dense head `[K, d]`.
    pub head: LayerParams,
}

impl ResidualNet {
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, noise: NoiseConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        noise.validate()?;
        let d = arch.input_dim;
        let blocks = (0..arch.blocks)
            .map(|_| {
                let mut layers = vec![
                    match arch.mixing {
                        Mixing::Dense => LayerParams::dense(d, d, true, rng),
                        Mixing::Circulant => LayerParams::circulant(d, true, rng),
                    },
                    LayerParams::activation(arch.activation),
                ];
                if arch.batch_norm {
                    layers.push(LayerParams::batch_norm(d));
                }
                layers
            })
            .collect();
        let head = LayerParams::dense(d, arch.classes, false, rng);
        let mut net = Self {
            arch,
            noise,
            blocks,
            head,
        };
        net.project_head();
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn has_batch_norm(&self) -> bool {
        self.blocks
            .iter()
            .flatten()
            .any(|l| matches!(l, LayerParams::BatchNorm(_)))
    }

    /// Trainable tensors in a fixed order: blocks first, then the head.
    pub fn params(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flatten()
            .flat_map(|l| l.params())
            .chain(self.head.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .blocks
            .iter_mut()
            .flatten()
            .flat_map(|l| l.params_mut())
            .collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Head weight matrix `[K, d]`.
    pub fn head_weight(&self) -> &Tensor {
        match &self.head {
            LayerParams::Dense { weight, .. } => weight,
            _ => unreachable!("head is always dense"),
        }
    }

    /// Rescales each head row onto the ball `‖w‖₂ ≤ a` when a bound is set.
    pub fn project_head(&mut self) {
        let Some(a) = self.arch.head_norm_bound else {
            return;
        };
        if let LayerParams::Dense { weight, .. } = &mut self.head {
            let d = weight.cols();
            for r in 0..weight.rows() {
                let row = &mut weight.data_mut()[r * d..(r + 1) * d];
                let norm = l2_norm(row);
                if norm > a {
                    let s = a / norm;
                    row.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }

    /// Full forward pass returning logits `[n, K]` and the cache for
    /// [`ResidualNet::backward`]. Noise is drawn in both modes.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut dyn NoiseSource) -> Result<(Tensor, NetCache)> {
        if x.shape().len() != 2 || x.cols() != self.arch.input_dim {
            return Err(Error::dim(format!(
                "network expects [n, {}] input, got {:?}",
                self.arch.input_dim,
                x.shape()
            )));
        }
        let mut h = if self.noise.strategy == NoiseStrategy::AdditiveI && self.noise.pi > 0.0 {
            input_perturb(x, self.noise.pi, rng)
        } else {
            x.clone()
        };
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for layers in &self.blocks {
            let (out, cache) =
                residual_block_forward(&h, layers, &self.noise, self.arch.skip_connections, rng, mode)?;
            block_caches.push(cache);
            h = out;
        }
        let (mut logits, head_cache) = layer_forward(&self.head, &h, mode)?;
        let mut output_draws = None;
        if self.noise.strategy == NoiseStrategy::MultiplicativeII && self.noise.pi > 0.0 {
            let mut n = vec![0.0; logits.len()];
            rng.fill_standard_normal(&mut n);
            let k = logits.cols();
            for s in 0..logits.rows() {
                let scale = self.noise.pi * l2_norm(h.row(s));
                for (o, z) in logits.row_mut(s).iter_mut().zip(&n[s * k..(s + 1) * k]) {
                    *o += scale * z;
                }
            }
            output_draws = Some(n);
        }
        Ok((
            logits,
            NetCache {
                blocks: block_caches,
                head: head_cache,
                final_state: h,
                output_draws,
            },
        ))
    }

    /// Gradients of `Σ dlogits·logits` with respect to [`ResidualNet::params`],
    /// using the noise draws stored in `cache`.
    pub fn backward(&self, cache: &NetCache, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        let (mut dh, head_grads) = layer_backward(&self.head, &cache.head, dlogits)?;
        if let Some(n) = &cache.output_draws {
            let k = dlogits.cols();
            let d = dh.cols();
            for s in 0..dh.rows() {
                let xs = cache.final_state.row(s);
                let norm = l2_norm(xs);
                if norm == 0.0 {
                    continue;
                }
                let mut coef = 0.0;
                for (g, z) in dlogits.row(s).iter().zip(&n[s * k..(s + 1) * k]) {
                    coef += g * z;
                }
                coef *= self.noise.pi / norm;
                let row = &mut dh.data_mut()[s * d..(s + 1) * d];
                for (r, xv) in row.iter_mut().zip(xs) {
                    *r += coef * xv;
                }
            }
        }
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (layers, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (dx, grads) =
                residual_block_backward(layers, bc, &self.noise, self.arch.skip_connections, &dh)?;
            per_block.push(grads);
            dh = dx;
        }
        per_block.reverse();
        let mut grads: Vec<Tensor> = per_block.into_iter().flatten().collect();
        grads.extend(head_grads);
        Ok(grads)
    }

    /// Folds train-mode batch statistics from `cache` into the running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &NetCache) {
        for (layers, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            for (layer, lc) in layers.iter_mut().zip(&bc.layers) {
                layer.absorb_batch_stats(lc);
            }
        }
    }

    /// Eval-mode logits.
    pub fn predict_logits(&self, x: &Tensor, rng: &mut dyn NoiseSource) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval, rng)?.0)
    }
}
