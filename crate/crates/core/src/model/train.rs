use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{Classifier, EnsembleModel};
use super::net::ResidualNet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy_batch, Algorithm, Mode, OptimState};
use crate::rng::{derive_seed, stream, tags, SimRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Algorithm,
    pub learning_rate: f64,
    /// `(epoch, divisor)`: from that 0-based epoch on, the rate is divided again.
    pub lr_schedule: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: Algorithm::SgdMomentum { momentum: 0.9 },
            learning_rate: 0.05,
            lr_schedule: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.lr_schedule.iter().any(|&(_, d)| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("learning-rate divisors must be positive"));
        }
        Ok(())
    }

    /// Optimizer iterations over a dataset of `n` examples.
    pub fn iterations(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// Learning rate in effect during 0-based `epoch`.
pub fn learning_rate_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr_schedule
        .iter()
        .filter(|&&(at, _)| epoch >= at)
        .fold(cfg.learning_rate, |lr, &(_, div)| lr / div)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's minibatches (noise active).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// `train_accuracy − test_accuracy`.
    pub generalization_gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Wall-clock time, kept apart from the deterministic fields.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Fraction of rows whose most probable class equals the label.
pub fn accuracy(model: &dyn Classifier, data: &Dataset, rng: &mut SimRng) -> Result<f64> {
    let probs = model.predict_proba(&data.features, rng)?;
    let correct = (0..data.len())
        .filter(|&i| argmax(probs.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Shared epoch loop. `batch_step` receives the network, the minibatch and the
/// forward-noise stream and returns `(summed loss, averaged gradient)`; the
/// loop applies the optimizer, the head projection and the bookkeeping.
pub fn run_epochs<F>(
    net: &mut ResidualNet,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut batch_step: F,
) -> Result<History>
where
    F: FnMut(&mut ResidualNet, &Dataset, &mut SimRng) -> Result<(f64, Vec<Tensor>)>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if train.dim() != net.input_dim() || train.classes != net.classes() {
        return Err(Error::dim(format!(
            "dataset is [{}, {}] with {} classes but the network expects width {} and {} classes",
            train.len(),
            train.dim(),
            train.classes,
            net.input_dim(),
            net.classes()
        )));
    }
    let start = Instant::now();
    let mut shuffle = stream(cfg.seed, tags::SHUFFLE);
    let mut forward = stream(cfg.seed, tags::FORWARD_NOISE);
    let mut eval = stream(cfg.seed, tags::EVAL_NOISE);
    let mut opt = OptimState::new(cfg.optimizer, cfg.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        opt.learning_rate = learning_rate_at(cfg, epoch);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk);
            let (loss, grads) = batch_step(net, &batch, &mut forward)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss became {loss} at step {}", history.steps),
                });
            }
            opt.step(&mut net.params_mut(), &grads).map_err(|e| match e {
                Error::NonFinite(detail) => Error::Divergence { epoch, detail },
                other => other,
            })?;
            net.project_head();
            loss_sum += loss;
            history.steps += 1;
        }
        let train_accuracy = accuracy(net, train, &mut eval)?;
        let test_accuracy = test.map(|t| accuracy(net, t, &mut eval)).transpose()?;
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: opt.learning_rate,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy,
            test_accuracy,
            generalization_gap: test_accuracy.map(|t| train_accuracy - t),
        });
    }
    history.wall_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

/// Minibatch training of one network with noise active in every forward pass.
pub fn train(net: &mut ResidualNet, data: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<History> {
    run_epochs(net, data, test, cfg, |net, batch, rng| {
        let (logits, cache) = net.forward(&batch.features, Mode::Train, rng)?;
        let (loss, dlogits) = softmax_cross_entropy_batch(&logits, &batch.labels)?;
        let mut grads = net.backward(&cache, &dlogits)?;
        net.absorb_batch_stats(&cache);
        let inv = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| g.scale(inv));
        Ok((loss, grads))
    })
}

/// Trains every member on the same data with its own streams derived from
/// `(cfg.seed, member index)`. Members run in parallel; the result does not
/// depend on the thread count.
pub fn train_ensemble(
    ens: &mut EnsembleModel,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<History>> {
    ens.members
        .par_iter_mut()
        .enumerate()
        .map(|(i, member)| {
            let member_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, tags::MEMBER_BASE + i as u64),
                ..cfg.clone()
            };
            train(member, data, test, &member_cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::model::{ArchConfig, NoiseConfig};

    #[test]
    fn schedule_divides_at_milestones() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_schedule: vec![(20, 4.0), (40, 4.0)],
            ..TrainConfig::default()
        };
        assert_eq!(learning_rate_at(&cfg, 0), 1.0);
        assert_eq!(learning_rate_at(&cfg, 19), 1.0);
        assert_eq!(learning_rate_at(&cfg, 20), 0.25);
        assert_eq!(learning_rate_at(&cfg, 45), 0.0625);
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = gaussian_blobs(40, 2, 4.0, 0.5, 0.5, &mut stream(1, 0)).unwrap();
        let mut net = ResidualNet::new(ArchConfig::new(2, 2, 2), NoiseConfig::none(), &mut stream(2, 0)).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &data, None, &cfg).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = gaussian_blobs(200, 2, 6.0, 0.5, 0.5, &mut stream(7, 0)).unwrap();
        let mut net = ResidualNet::new(ArchConfig::new(2, 2, 2), NoiseConfig::none(), &mut stream(8, 0)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            seed: 3,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &data, None, &cfg).unwrap();
        assert!(h.last().unwrap().train_accuracy >= 0.99);
        assert_eq!(h.steps, 50 * 200usize.div_ceil(32));
    }

    #[test]
    fn divergence_is_reported() {
        let data = gaussian_blobs(40, 2, 4.0, 0.5, 0.5, &mut stream(1, 0)).unwrap();
        let mut net = ResidualNet::new(ArchConfig::new(2, 1, 2), NoiseConfig::none(), &mut stream(2, 0)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let err = run_epochs(&mut net, &data, None, &cfg, |net, _, _| {
            Ok((f64::NAN, net.params().into_iter().cloned().collect()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, .. }));
    }

    #[test]
    fn ensemble_training_is_thread_count_independent() {
        let data = gaussian_blobs(60, 3, 3.0, 1.0, 0.5, &mut stream(4, 0)).unwrap();
        let arch = ArchConfig::new(3, 2, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = EnsembleModel::init(3, &arch, NoiseConfig::additive(0.4), 11).unwrap();
                let h = train_ensemble(&mut ens, &data, None, &cfg).unwrap();
                (ens, h)
            })
        };
        let (a, ha) = run(1);
        let (b, hb) = run(3);
        assert_eq!(a, b);
        let epochs = |h: &Vec<History>| h.iter().map(|x| x.epochs.clone()).collect::<Vec<_>>();
        assert_eq!(epochs(&ha), epochs(&hb));
        assert_ne!(a.members[0], a.members[1]);
    }
}
