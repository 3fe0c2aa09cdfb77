//! DPSGD baseline: per-example (or per-microbatch) gradient clipping followed
//! by Gaussian noise on the aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{run_epochs, History, ResidualNet, TrainConfig};
use crate::nn::{softmax_cross_entropy_batch, Mode};
use crate::rng::{stream, tags, NoNoise, NoiseSource, SimRng};
use crate::tensor::Tensor;

/// Budgets reported alongside the published DPSGD baselines at `δ = 1e-5`;
/// recorded as metadata, not re-derived.
pub const REPORTED_EPSILON_IDC: f64 = 15.79;
pub const REPORTED_EPSILON_CIFAR10: f64 = 22.33;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub train: TrainConfig,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub microbatch_size: usize,
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            clip_norm: 1.0,
            noise_multiplier: 1.1,
            microbatch_size: 1,
        }
    }
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::invalid("noise_multiplier must be finite and nonnegative"));
        }
        if self.microbatch_size == 0 {
            return Err(Error::invalid("microbatch_size must be at least 1"));
        }
        self.train.validate()
    }
}

/// `g·min(1, C/‖g‖₂)`.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = crate::tensor::l2_norm(g);
    if norm <= clip_norm {
        return g.to_vec();
    }
    let s = clip_norm / norm;
    g.iter().map(|v| v * s).collect()
}

/// In-place clipping of a gradient spread over several tensors, using the
/// norm of their concatenation. Returns the applied factor.
pub fn clip_tensors(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm <= clip_norm {
        return 1.0;
    }
    let s = clip_norm / norm;
    grads.iter_mut().for_each(|t| t.scale(s));
    s
}

/// `(Σ gᵢ + N(0, σ²C²·I)) / count`; the sum runs in the given order.
pub fn noisy_aggregate(
    clipped: &[Vec<Tensor>],
    clip_norm: f64,
    noise_multiplier: f64,
    rng: &mut dyn NoiseSource,
) -> Result<Vec<Tensor>> {
    let first = clipped
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty batch"))?;
    let mut acc: Vec<Tensor> = first.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for g in clipped {
        if g.len() != acc.len() || g.iter().zip(&acc).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::dim("per-example gradients differ in shape"));
        }
        for (a, t) in acc.iter_mut().zip(g) {
            for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                *x += y;
            }
        }
    }
    if noise_multiplier > 0.0 {
        let sd = noise_multiplier * clip_norm;
        for a in acc.iter_mut() {
            let mut z = vec![0.0; a.len()];
            rng.fill_standard_normal(&mut z);
            for (x, n) in a.data_mut().iter_mut().zip(&z) {
                *x += sd * n;
            }
        }
    }
    let inv = 1.0 / clipped.len() as f64;
    acc.iter_mut().for_each(|t| t.scale(inv));
    Ok(acc)
}

fn microbatch_gradient(
    net: &ResidualNet,
    batch: &Dataset,
    rows: &[usize],
    clip_norm: f64,
    rng: &mut dyn NoiseSource,
) -> Result<(f64, Vec<Tensor>)> {
    let x = batch.features.select_rows(rows);
    let labels: Vec<usize> = rows.iter().map(|&i| batch.labels[i]).collect();
    let (logits, cache) = net.forward(&x, Mode::Train, rng)?;
    let (loss, dl) = softmax_cross_entropy_batch(&logits, &labels)?;
    let mut grads = net.backward(&cache, &dl)?;
    if rows.len() > 1 {
        let inv = 1.0 / rows.len() as f64;
        grads.iter_mut().for_each(|g| g.scale(inv));
    }
    clip_tensors(&mut grads, clip_norm);
    Ok((loss, grads))
}

/// DPSGD training. Networks with batch normalization are rejected, since
/// per-example statistics are degenerate.
pub fn dpsgd_train(net: &mut ResidualNet, data: &Dataset, test: Option<&Dataset>, cfg: &DpSgdConfig) -> Result<History> {
    cfg.validate()?;
    if net.has_batch_norm() {
        return Err(Error::invalid("DPSGD requires a network without batch normalization"));
    }
    let mut dp_noise = stream(cfg.train.seed, tags::DP_NOISE);
    let mb = cfg.microbatch_size;
    run_epochs(net, data, test, &cfg.train, |net, batch, fwd: &mut SimRng| {
        let idx: Vec<usize> = (0..batch.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(mb).collect();
        let per_micro: Vec<(f64, Vec<Tensor>)> = if net.noise.is_stochastic() {
            // Noise draws stay in one sequential stream.
            chunks
                .iter()
                .map(|rows| microbatch_gradient(net, batch, rows, cfg.clip_norm, fwd))
                .collect::<Result<_>>()?
        } else {
            let shared: &ResidualNet = net;
            chunks
                .par_iter()
                .map(|rows| microbatch_gradient(shared, batch, rows, cfg.clip_norm, &mut NoNoise))
                .collect::<Result<_>>()?
        };
        let loss: f64 = per_micro.iter().map(|(l, _)| l).sum();
        let grads: Vec<Vec<Tensor>> = per_micro.into_iter().map(|(_, g)| g).collect();
        let agg = noisy_aggregate(&grads, cfg.clip_norm, cfg.noise_multiplier, &mut dp_noise)?;
        Ok((loss, agg))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::model::{train, ArchConfig, NoiseConfig};
    use crate::nn::Algorithm;
    use proptest::prelude::*;

    #[test]
    fn clip_examples() {
        let g = vec![0.3, 0.4];
        assert_eq!(clip_gradient(&g, 1.0), g);
        let c = clip_gradient(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(g in prop::collection::vec(-100.0f64..100.0, 1..32), c in 0.01f64..10.0) {
            prop_assert!(crate::tensor::l2_norm(&clip_gradient(&g, c)) <= c * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_noise_is_clipped_mean() {
        let g = vec![vec![Tensor::vector(vec![1.0, 2.0])], vec![Tensor::vector(vec![3.0, -2.0])]];
        let m = noisy_aggregate(&g, 1.0, 0.0, &mut NoNoise).unwrap();
        assert_eq!(m[0].data(), &[2.0, 0.0]);
        let one = noisy_aggregate(&g[..1], 1.0, 0.0, &mut NoNoise).unwrap();
        assert_eq!(one[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn aggregate_noise_std() {
        let g = vec![vec![Tensor::zeros(&[1000])]; 128];
        let mut rng = stream(1, tags::DP_NOISE);
        let mut samples = Vec::with_capacity(100_000);
        for _ in 0..100 {
            samples.extend_from_slice(noisy_aggregate(&g, 1.0, 1.1, &mut rng).unwrap()[0].data());
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd / (1.1 / 128.0) - 1.0).abs() < 0.05, "sd {sd}");
    }

    fn setup() -> (Dataset, ResidualNet) {
        let data = gaussian_blobs(64, 3, 3.0, 1.0, 0.5, &mut stream(1, 0)).unwrap();
        let mut arch = ArchConfig::new(3, 2, 2);
        arch.batch_norm = false;
        let net = ResidualNet::new(arch, NoiseConfig::none(), &mut stream(2, 0)).unwrap();
        (data, net)
    }

    #[test]
    fn disabled_mechanism_equals_sgd() {
        let (data, net) = setup();
        let train_cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            optimizer: Algorithm::SgdMomentum { momentum: 0.9 },
            learning_rate: 0.1,
            lr_schedule: vec![(2, 4.0)],
            seed: 9,
        };
        let mut sgd = net.clone();
        train(&mut sgd, &data, None, &train_cfg).unwrap();
        let mut dp = net.clone();
        let cfg = DpSgdConfig {
            train: train_cfg,
            clip_norm: 1e9,
            noise_multiplier: 0.0,
            microbatch_size: 1,
        };
        dpsgd_train(&mut dp, &data, None, &cfg).unwrap();
        assert_eq!(sgd, dp);
    }

    #[test]
    fn update_count() {
        let (data, mut net) = setup();
        let four = data.subset(&[0, 1, 2, 3]);
        let cfg = DpSgdConfig {
            train: TrainConfig {
                epochs: 1,
                batch_size: 1,
                ..TrainConfig::default()
            },
            ..DpSgdConfig::default()
        };
        assert_eq!(dpsgd_train(&mut net, &four, None, &cfg).unwrap().steps, 4);
    }

    #[test]
    fn batch_norm_is_rejected() {
        let (data, _) = setup();
        let mut net = ResidualNet::new(ArchConfig::new(3, 1, 2), NoiseConfig::none(), &mut stream(2, 0)).unwrap();
        assert!(dpsgd_train(&mut net, &data, None, &DpSgdConfig::default()).is_err());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (data, net) = setup();
        let cfg = DpSgdConfig {
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                seed: 4,
                ..TrainConfig::default()
            },
            ..DpSgdConfig::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let mut n = net.clone();
                    dpsgd_train(&mut n, &data, None, &cfg).unwrap();
                    n
                })
        };
        assert_eq!(run(1), run(4));
    }
}
