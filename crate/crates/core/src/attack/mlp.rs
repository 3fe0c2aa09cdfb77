use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::nn::{
    backward_sequence, forward_sequence, softmax, softmax_cross_entropy_batch, Activation, LayerParams, Mode,
    OptimState,
};
use crate::rng::{stream, tags, NoiseSource};
use crate::tensor::Tensor;

/// Top-k probabilities (sorted descending) and the membership label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub features: Vec<f64>,
    /// 1 for a member of the relevant training split, 0 otherwise.
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 32,
            thresholds: vec![0.4, 0.5, 0.6, 0.7],
            seed: 0,
        }
    }
}

/// The `k` largest entries of `probs` in descending order.
pub fn top_k(probs: &[f64], k: usize) -> Vec<f64> {
    let mut v = probs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(k);
    v
}

/// One eval-mode pass over `x`, returning the sorted top-k probabilities per row.
pub fn extract_features(model: &dyn Classifier, x: &Tensor, k: usize, rng: &mut dyn NoiseSource) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > model.classes() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={}",
            model.classes()
        )));
    }
    let probs = model.predict_proba(x, rng)?;
    Ok((0..probs.rows()).map(|r| top_k(probs.row(r), k)).collect())
}

/// MLP `k → hidden → 2` whose second softmax output is the membership probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub layers: Vec<LayerParams>,
}

impl AttackModel {
    fn input_dim(&self) -> usize {
        self.layers[0].io_dims().map(|(i, _)| i).unwrap_or(0)
    }

    fn logits(&self, features: &[Vec<f64>]) -> Result<Tensor> {
        let x = features_tensor(features, self.input_dim())?;
        Ok(forward_sequence(&self.layers, &x, Mode::Eval)?.0)
    }

    pub fn membership_scores(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        let logits = self.logits(features)?;
        Ok((0..logits.rows()).map(|r| softmax(logits.row(r))[1]).collect())
    }

    /// Fraction of records whose predicted label (score ≥ ½) is correct.
    pub fn accuracy(&self, records: &[FeatureRecord]) -> Result<f64> {
        let feats: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
        let scores = self.membership_scores(&feats)?;
        let ok = scores
            .iter()
            .zip(records)
            .filter(|(s, r)| usize::from(**s >= 0.5) == r.label)
            .count();
        Ok(ok as f64 / records.len() as f64)
    }
}

fn features_tensor(features: &[Vec<f64>], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(features.len() * k);
    for f in features {
        if f.len() != k {
            return Err(Error::dim(format!("attack expects {k} features, got {}", f.len())));
        }
        data.extend_from_slice(f);
    }
    Tensor::new(vec![features.len(), k], data)
}

/// Adam on the cross-entropy of the membership labels.
pub fn train_attack_model(records: &[FeatureRecord], cfg: &AttackConfig) -> Result<AttackModel> {
    let k = records
        .first()
        .map(|r| r.features.len())
        .ok_or_else(|| Error::invalid("no attack training records"))?;
    if records.iter().any(|r| r.label > 1) {
        return Err(Error::invalid("membership labels must be 0 or 1"));
    }
    let positives = records.iter().filter(|r| r.label == 1).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::invalid("attack training data contains a single class"));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::invalid("attack batch size and width must be positive"));
    }
    let mut init = stream(cfg.seed, tags::INIT);
    let mut model = AttackModel {
        layers: vec![
            LayerParams::dense(k, cfg.hidden, true, &mut init),
            LayerParams::activation(Activation::Relu),
            LayerParams::dense(cfg.hidden, 2, true, &mut init),
        ],
    };
    let feats: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
    let x = features_tensor(&feats, k)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let mut opt = OptimState::adam(cfg.learning_rate);
    let mut shuffle = stream(cfg.seed, tags::SHUFFLE);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (out, caches) = forward_sequence(&model.layers, &xb, Mode::Train)?;
            let (loss, dl) = softmax_cross_entropy_batch(&out, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "attack model loss is not finite".into(),
                });
            }
            let (_, mut grads) = backward_sequence(&model.layers, &caches, &dl)?;
            let inv = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(inv));
            let mut params: Vec<&mut Tensor> = model.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::evaluate_scores;
    use crate::model::{ArchConfig, EnsembleModel, NoiseConfig};
    use crate::rng::NoNoise;
    use rand::Rng;

    #[test]
    fn top_k_sorts_and_truncates() {
        assert_eq!(top_k(&[0.3, 0.7], 2), vec![0.7, 0.3]);
        assert_eq!(top_k(&[0.1; 10], 3), vec![0.1; 3]);
    }

    #[test]
    fn full_feature_vector_sums_to_one() {
        let ens = EnsembleModel::init(2, &ArchConfig::new(3, 1, 4), NoiseConfig::none(), 1).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]);
        let f = extract_features(&ens, &x, 4, &mut NoNoise).unwrap();
        for row in f {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(extract_features(&ens, &x, 5, &mut NoNoise).is_err());
    }

    fn separable(n: usize, seed: u64) -> Vec<FeatureRecord> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|i| {
                let member = i % 2 == 0;
                let top = if member {
                    rng.random_range(0.95..1.0)
                } else {
                    rng.random_range(0.5..0.6)
                };
                FeatureRecord {
                    features: vec![top, 1.0 - top],
                    label: usize::from(member),
                }
            })
            .collect()
    }

    #[test]
    fn learns_separable_features() {
        let data = separable(200, 1);
        let m = train_attack_model(&data, &AttackConfig::default()).unwrap();
        assert!(m.accuracy(&data).unwrap() >= 0.95);
    }

    #[test]
    fn shuffled_labels_give_chance_auc() {
        let mut total = 0.0;
        for seed in 0..5 {
            let mut data = separable(200, seed);
            let mut rng = stream(seed, 99);
            let mut labels: Vec<usize> = data.iter().map(|r| r.label).collect();
            labels.shuffle(&mut rng);
            for (r, l) in data.iter_mut().zip(labels) {
                r.label = l;
            }
            let cfg = AttackConfig { seed, ..AttackConfig::default() };
            let m = train_attack_model(&data[..100], &cfg).unwrap();
            let held = &data[100..];
            let feats = |lab: usize| held.iter().filter(|r| r.label == lab).map(|r| r.features.clone()).collect::<Vec<_>>();
            let rep = evaluate_scores(
                m.membership_scores(&feats(1)).unwrap(),
                m.membership_scores(&feats(0)).unwrap(),
                &[0.5],
            )
            .unwrap();
            total += rep.auc;
        }
        let mean = total / 5.0;
        assert!((0.4..=0.6).contains(&mean), "mean auc {mean}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(60, 3);
        let cfg = AttackConfig { epochs: 5, ..AttackConfig::default() };
        assert_eq!(train_attack_model(&data, &cfg).unwrap(), train_attack_model(&data, &cfg).unwrap());
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<FeatureRecord> = separable(10, 0).into_iter().filter(|r| r.label == 1).collect();
        assert!(train_attack_model(&data, &AttackConfig::default()).is_err());
    }
}
