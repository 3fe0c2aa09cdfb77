//! Layer parameters, forward passes and hand-derived backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::circulant::{circulant_matvec_into, circulant_transpose_matvec_into};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variances below this are clamped before normalizing.
pub const BN_VARIANCE_FLOOR: f64 = 1e-12;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// Lipschitz constant `L`; all supported activations are monotone and 1-Lipschitz.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[d], 1.0),
            beta: Tensor::zeros(&[d]),
            running_mean: Tensor::zeros(&[d]),
            running_var: Tensor::filled(&[d], 1.0),
            momentum: BN_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = ((1.0 - m) * *r + m * b).max(BN_VARIANCE_FLOOR);
        }
    }
}

/// Parameters of one layer. Dense weights are `[out, in]`; a circulant layer
/// stores only its length-`d` first row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerParams {
    Dense { weight: Tensor, bias: Option<Tensor> },
    Circulant { first_row: Tensor, bias: Option<Tensor> },
    BatchNorm(BatchNorm),
    Activation { activation: Activation },
}

impl LayerParams {
    /// Dense layer with weights uniform in `[-1/√in, 1/√in]` and zero bias.
    pub fn dense<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        LayerParams::Dense {
            weight: Tensor::matrix(output, input, data),
            bias: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn circulant<R: Rng + ?Sized>(d: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let data = (0..d).map(|_| rng.random_range(-bound..=bound)).collect();
        LayerParams::Circulant {
            first_row: Tensor::vector(data),
            bias: bias.then(|| Tensor::zeros(&[d])),
        }
    }

    pub fn batch_norm(d: usize) -> Self {
        LayerParams::BatchNorm(BatchNorm::new(d))
    }

    pub fn activation(activation: Activation) -> Self {
        LayerParams::Activation { activation }
    }

    /// Trainable tensors in a fixed order (weight, bias / gamma, beta).
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Dense { weight, bias } => std::iter::once(weight).chain(bias.as_ref()).collect(),
            LayerParams::Circulant { first_row, bias } => {
                std::iter::once(first_row).chain(bias.as_ref()).collect()
            }
            LayerParams::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            LayerParams::Activation { .. } => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::Dense { weight, bias } => std::iter::once(weight).chain(bias.as_mut()).collect(),
            LayerParams::Circulant { first_row, bias } => {
                std::iter::once(first_row).chain(bias.as_mut()).collect()
            }
            LayerParams::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            LayerParams::Activation { .. } => Vec::new(),
        }
    }

    /// Input and output widths, when the layer fixes them.
    pub fn io_dims(&self) -> Option<(usize, usize)> {
        match self {
            LayerParams::Dense { weight, .. } => Some((weight.cols(), weight.rows())),
            LayerParams::Circulant { first_row, .. } => Some((first_row.len(), first_row.len())),
            LayerParams::BatchNorm(bn) => Some((bn.width(), bn.width())),
            LayerParams::Activation { .. } => None,
        }
    }

    /// Applies the running-statistics update recorded in a train-mode cache.
    pub fn absorb_batch_stats(&mut self, cache: &LayerCache) {
        if let (LayerParams::BatchNorm(bn), LayerCache::BatchNorm { batch_stats: Some((mean, var)), .. }) =
            (self, cache)
        {
            bn.update_running(mean, var);
        }
    }
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    /// Layer input (pre-activation for activation layers).
    Input(Tensor),
    BatchNorm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        /// `(mean, biased variance)` of the batch; present in train mode only.
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
}

fn check_width(x: &Tensor, width: usize, what: &str) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != width {
        return Err(Error::dim(format!(
            "{what} expects [n, {width}] input, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Forward pass over a batch `x` of shape `[n, in]`.
pub fn layer_forward(params: &LayerParams, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
    let n = x.rows();
    match params {
        LayerParams::Dense { weight, bias } => {
            let (out, inp) = (weight.rows(), weight.cols());
            check_width(x, inp, "dense layer")?;
            let w = weight.data();
            let mut y = Tensor::zeros(&[n, out]);
            for s in 0..n {
                let xs = x.row(s);
                let ys = y.row_mut(s);
                for (i, yi) in ys.iter_mut().enumerate() {
                    let wi = &w[i * inp..(i + 1) * inp];
                    let mut acc = 0.0;
                    for (a, b) in wi.iter().zip(xs) {
                        acc += a * b;
                    }
                    *yi = acc + bias.as_ref().map_or(0.0, |b| b.data()[i]);
                }
            }
            Ok((y, LayerCache::Input(x.clone())))
        }
        LayerParams::Circulant { first_row, bias } => {
            let d = first_row.len();
            check_width(x, d, "circulant layer")?;
            let mut y = Tensor::zeros(&[n, d]);
            for s in 0..n {
                circulant_matvec_into(first_row.data(), x.row(s), y.row_mut(s));
                if let Some(b) = bias {
                    for (yi, bi) in y.row_mut(s).iter_mut().zip(b.data()) {
                        *yi += bi;
                    }
                }
            }
            Ok((y, LayerCache::Input(x.clone())))
        }
        LayerParams::BatchNorm(bn) => {
            let d = bn.width();
            check_width(x, d, "batch norm")?;
            let (mean, var, batch_stats) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; d];
                    for s in 0..n {
                        for (m, v) in mean.iter_mut().zip(x.row(s)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    let mut var = vec![0.0; d];
                    for s in 0..n {
                        for ((acc, v), m) in var.iter_mut().zip(x.row(s)).zip(&mean) {
                            *acc += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n as f64);
                    (mean.clone(), var.clone(), Some((mean, var)))
                }
                Mode::Eval => (
                    bn.running_mean.data().to_vec(),
                    bn.running_var.data().to_vec(),
                    None,
                ),
            };
            let inv_std: Vec<f64> = var
                .iter()
                .map(|v| 1.0 / v.max(BN_VARIANCE_FLOOR).sqrt())
                .collect();
            let mut xhat = Tensor::zeros(&[n, d]);
            let mut y = Tensor::zeros(&[n, d]);
            let (g, b) = (bn.gamma.data(), bn.beta.data());
            for s in 0..n {
                let xs = x.row(s);
                let hs = xhat.row_mut(s);
                for c in 0..d {
                    hs[c] = (xs[c] - mean[c]) * inv_std[c];
                }
                let hs = xhat.row(s).to_vec();
                for (c, yc) in y.row_mut(s).iter_mut().enumerate() {
                    *yc = g[c] * hs[c] + b[c];
                }
            }
            Ok((
                y,
                LayerCache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ))
        }
        LayerParams::Activation { activation } => {
            let mut y = x.clone();
            y.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
            Ok((y, LayerCache::Input(x.clone())))
        }
    }
}

/// Backward pass: returns `dL/dx` and the parameter gradients in
/// [`LayerParams::params`] order, each summed over the batch.
pub fn layer_backward(params: &LayerParams, cache: &LayerCache, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let n = dy.rows();
    match (params, cache) {
        (LayerParams::Dense { weight, bias }, LayerCache::Input(x)) => {
            let (out, inp) = (weight.rows(), weight.cols());
            let w = weight.data();
            let mut dx = Tensor::zeros(&[n, inp]);
            let mut gw = Tensor::zeros(&[out, inp]);
            let mut gb = bias.as_ref().map(|_| Tensor::zeros(&[out]));
            for s in 0..n {
                let dys = dy.row(s);
                let xs = x.row(s);
                let gwd = gw.data_mut();
                for (i, &g) in dys.iter().enumerate() {
                    let row = &mut gwd[i * inp..(i + 1) * inp];
                    for (acc, xv) in row.iter_mut().zip(xs) {
                        *acc += g * xv;
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for (acc, g) in gb.data_mut().iter_mut().zip(dys) {
                        *acc += g;
                    }
                }
                let dxs = dx.row_mut(s);
                for (i, &g) in dys.iter().enumerate() {
                    let wi = &w[i * inp..(i + 1) * inp];
                    for (acc, wv) in dxs.iter_mut().zip(wi) {
                        *acc += wv * g;
                    }
                }
            }
            let mut grads = vec![gw];
            grads.extend(gb);
            Ok((dx, grads))
        }
        (LayerParams::Circulant { first_row, bias }, LayerCache::Input(x)) => {
            let d = first_row.len();
            let a = first_row.data();
            let mut dx = Tensor::zeros(&[n, d]);
            let mut ga = Tensor::zeros(&[d]);
            let mut gb = bias.as_ref().map(|_| Tensor::zeros(&[d]));
            for s in 0..n {
                let dys = dy.row(s);
                let xs = x.row(s);
                // y_r = Σ_k a_k x_{(r+k) mod d}  ⇒  ∂/∂a_k = Σ_r dy_r x_{(r+k) mod d}
                for (k, acc) in ga.data_mut().iter_mut().enumerate() {
                    let mut local = 0.0;
                    for (r, g) in dys.iter().enumerate() {
                        let idx = if r + k >= d { r + k - d } else { r + k };
                        local += g * xs[idx];
                    }
                    *acc += local;
                }
                if let Some(gb) = gb.as_mut() {
                    for (acc, g) in gb.data_mut().iter_mut().zip(dys) {
                        *acc += g;
                    }
                }
                circulant_transpose_matvec_into(a, dys, dx.row_mut(s));
            }
            let mut grads = vec![ga];
            grads.extend(gb);
            Ok((dx, grads))
        }
        (
            LayerParams::BatchNorm(bn),
            LayerCache::BatchNorm {
                xhat,
                inv_std,
                batch_stats,
            },
        ) => {
            let d = bn.width();
            let g = bn.gamma.data();
            let mut ggamma = Tensor::zeros(&[d]);
            let mut gbeta = Tensor::zeros(&[d]);
            for s in 0..n {
                let dys = dy.row(s);
                let hs = xhat.row(s);
                for c in 0..d {
                    ggamma.data_mut()[c] += dys[c] * hs[c];
                    gbeta.data_mut()[c] += dys[c];
                }
            }
            let mut dx = Tensor::zeros(&[n, d]);
            if batch_stats.is_some() {
                // Batch statistics depend on every example in the batch.
                let nf = n as f64;
                let mut sum_dh = vec![0.0; d];
                let mut sum_dh_h = vec![0.0; d];
                for s in 0..n {
                    let dys = dy.row(s);
                    let hs = xhat.row(s);
                    for c in 0..d {
                        let dh = dys[c] * g[c];
                        sum_dh[c] += dh;
                        sum_dh_h[c] += dh * hs[c];
                    }
                }
                for s in 0..n {
                    let dys = dy.row(s).to_vec();
                    let hs = xhat.row(s).to_vec();
                    let dxs = dx.row_mut(s);
                    for c in 0..d {
                        let dh = dys[c] * g[c];
                        dxs[c] = inv_std[c] / nf * (nf * dh - sum_dh[c] - hs[c] * sum_dh_h[c]);
                    }
                }
            } else {
                for s in 0..n {
                    let dys = dy.row(s).to_vec();
                    let dxs = dx.row_mut(s);
                    for c in 0..d {
                        dxs[c] = dys[c] * g[c] * inv_std[c];
                    }
                }
            }
            Ok((dx, vec![ggamma, gbeta]))
        }
        (LayerParams::Activation { activation }, LayerCache::Input(z)) => {
            let mut dx = dy.clone();
            for (g, zv) in dx.data_mut().iter_mut().zip(z.data()) {
                *g *= activation.derivative(*zv);
            }
            Ok((dx, Vec::new()))
        }
        _ => Err(Error::invalid("layer cache does not match layer kind")),
    }
}

/// Runs `layers` in order, returning the output and one cache per layer.
pub fn forward_sequence(layers: &[LayerParams], x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for layer in layers {
        let (out, cache) = layer_forward(layer, &h, mode)?;
        caches.push(cache);
        h = out;
    }
    Ok((h, caches))
}

/// Reverse of [`forward_sequence`]; gradients are concatenated in layer order.
pub fn backward_sequence(
    layers: &[LayerParams],
    caches: &[LayerCache],
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(layers.len());
    let mut g = dy.clone();
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (dx, grads) = layer_backward(layer, cache, &g)?;
        per_layer.push(grads);
        g = dx;
    }
    per_layer.reverse();
    Ok((g, per_layer.into_iter().flatten().collect()))
}
