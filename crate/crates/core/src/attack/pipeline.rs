use serde::{Deserialize, Serialize};

use super::mlp::{extract_features, train_attack_model, AttackConfig, FeatureRecord};
use super::roc::{evaluate_attack, AttackReport};
use super::split::{split_dataset, split_dataset_stratified, DatasetSplit};
use crate::data::Dataset;
use crate::dpsgd::{dpsgd_train, DpSgdConfig};
use crate::error::{Result, StageContext};
use crate::model::{accuracy, train, train_ensemble, ArchConfig, Classifier, EnsembleModel, NoiseConfig, ResidualNet, TrainConfig};
use crate::rng::{derive_seed, stream, tags};

/// Sub-stream tags of one membership experiment.
const SHADOW: u64 = 101;
const TARGET: u64 = 102;
const ATTACK_MODEL: u64 = 103;
const QUERY: u64 = 104;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "trainer", rename_all = "snake_case")]
pub enum TargetTrainer {
    Standard,
    Dpsgd {
        clip_norm: f64,
        noise_multiplier: f64,
        microbatch_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub arch: ArchConfig,
    pub noise: NoiseConfig,
    /// Ensemble size `k`.
    pub ensemble: usize,
    pub train: TrainConfig,
    pub trainer: TargetTrainer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub generalization_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MembershipResult {
    pub report: AttackReport,
    pub utility: Utility,
    pub shadow_utility: Utility,
    pub attack_train_accuracy: f64,
    pub split: DatasetSplit,
    /// Wall-clock seconds per epoch of training the whole target, all
    /// ensemble members included (not deterministic).
    #[serde(skip)]
    pub target_epoch_seconds: f64,
}

fn records(features: Vec<Vec<f64>>, label: usize) -> impl Iterator<Item = FeatureRecord> {
    features.into_iter().map(move |f| FeatureRecord { features: f, label })
}

fn utility(model: &dyn Classifier, train_set: &Dataset, test_set: &Dataset, seed: u64) -> Result<Utility> {
    let mut rng = stream(seed, tags::EVAL_NOISE);
    let train_accuracy = accuracy(model, train_set, &mut rng)?;
    let test_accuracy = accuracy(model, test_set, &mut rng)?;
    Ok(Utility {
        train_accuracy,
        test_accuracy,
        generalization_gap: train_accuracy - test_accuracy,
    })
}

/// Full pipeline. Every sub-seed (split, shadow, target members, attack model,
/// queries) is derived from `seed`; the `seed` fields of the nested training
/// configs are ignored.
pub fn run_membership_experiment(
    data: &Dataset,
    target: &TargetConfig,
    shadow: &ShadowConfig,
    attack: &AttackConfig,
    stratified: bool,
    seed: u64,
) -> Result<MembershipResult> {
    let mut split_rng = stream(seed, tags::SPLIT);
    let split = if stratified {
        split_dataset_stratified(&data.labels, data.classes, &mut split_rng)?
    } else {
        split_dataset(data.len(), &mut split_rng)?
    };
    let shadow_train = data.subset(&split.shadow_train);
    let shadow_out = data.subset(&split.shadow_out);
    let target_train = data.subset(&split.target_train);
    let target_out = data.subset(&split.target_out);
    let k = data.classes.min(3);

    // Shadow: the standard, noise-free network.
    let shadow_seed = derive_seed(seed, SHADOW);
    let mut shadow_net = ResidualNet::new(shadow.arch.clone(), NoiseConfig::none(), &mut stream(shadow_seed, tags::INIT))
        .stage("shadow init")?;
    let shadow_cfg = TrainConfig {
        seed: shadow_seed,
        ..shadow.train.clone()
    };
    train(&mut shadow_net, &shadow_train, None, &shadow_cfg).stage("shadow training")?;
    let shadow_utility = utility(&shadow_net, &shadow_train, &shadow_out, shadow_seed)?;

    let mut query = stream(seed, QUERY);
    let mut attack_records: Vec<FeatureRecord> =
        records(extract_features(&shadow_net, &shadow_train.features, k, &mut query)?, 1).collect();
    attack_records.extend(records(extract_features(&shadow_net, &shadow_out.features, k, &mut query)?, 0));
    let attack_cfg = AttackConfig {
        seed: derive_seed(seed, ATTACK_MODEL),
        ..attack.clone()
    };
    let attack_model = train_attack_model(&attack_records, &attack_cfg).stage("attack training")?;
    let attack_train_accuracy = attack_model.accuracy(&attack_records)?;

    // Target.
    let target_seed = derive_seed(seed, TARGET);
    let mut ensemble = EnsembleModel::init(target.ensemble, &target.arch, target.noise, target_seed)?;
    let target_cfg = TrainConfig {
        seed: target_seed,
        ..target.train.clone()
    };
    let clock = std::time::Instant::now();
    let histories = match &target.trainer {
        TargetTrainer::Standard => train_ensemble(&mut ensemble, &target_train, None, &target_cfg),
        TargetTrainer::Dpsgd {
            clip_norm,
            noise_multiplier,
            microbatch_size,
        } => ensemble
            .members
            .iter_mut()
            .enumerate()
            .map(|(i, m)| {
                let cfg = DpSgdConfig {
                    train: TrainConfig {
                        seed: derive_seed(target_seed, tags::MEMBER_BASE + i as u64),
                        ..target_cfg.clone()
                    },
                    clip_norm: *clip_norm,
                    noise_multiplier: *noise_multiplier,
                    microbatch_size: *microbatch_size,
                };
                dpsgd_train(m, &target_train, None, &cfg)
            })
            .collect(),
    }
    .stage("target training")?;
    let elapsed = clock.elapsed().as_secs_f64();
    let epochs = histories.first().map_or(0, |h| h.epochs.len());
    let target_epoch_seconds = if epochs == 0 { 0.0 } else { elapsed / epochs as f64 };
    let utility = utility(&ensemble, &target_train, &target_out, target_seed)?;

    let members = extract_features(&ensemble, &target_train.features, k, &mut query)?;
    let nonmembers = extract_features(&ensemble, &target_out.features, k, &mut query)?;
    let report = evaluate_attack(&attack_model, &members, &nonmembers, &attack.thresholds)?;
    Ok(MembershipResult {
        report,
        utility,
        shadow_utility,
        attack_train_accuracy,
        split,
        target_epoch_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;

    #[test]
    fn smoke_noise_free_single_member() {
        let data = gaussian_blobs(200, 4, 2.0, 1.0, 0.5, &mut stream(1, 0)).unwrap();
        let arch = ArchConfig::new(4, 2, 2);
        let tc = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let target = TargetConfig {
            arch: arch.clone(),
            noise: NoiseConfig::none(),
            ensemble: 1,
            train: tc.clone(),
            trainer: TargetTrainer::Standard,
        };
        let shadow = ShadowConfig { arch, train: tc };
        let attack = AttackConfig {
            epochs: 5,
            ..AttackConfig::default()
        };
        let r = run_membership_experiment(&data, &target, &shadow, &attack, true, 3).unwrap();
        assert!(r.report.auc.is_finite());
        assert!(r.utility.test_accuracy.is_finite());
        assert_eq!(r.report.member_scores.len(), 50);
        let again = run_membership_experiment(&data, &target, &shadow, &attack, true, 3).unwrap();
        assert_eq!(r.report, again.report);
    }
}
