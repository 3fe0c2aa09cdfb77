//! Shadow-model membership inference: split the pool, train a noise-free
//! shadow network, learn a member/non-member classifier on its top-k output
//! probabilities and score the target with it.

mod mlp;
mod pipeline;
mod roc;
mod split;

pub use mlp::{top_k, extract_features, train_attack_model, AttackConfig, AttackModel, FeatureRecord};
pub use pipeline::{run_membership_experiment, MembershipResult, ShadowConfig, TargetConfig, TargetTrainer, Utility};
pub use roc::{auc_pair_concordance, evaluate_attack, evaluate_scores, roc_curve, trapezoid_auc, AttackReport, ThresholdRow};
pub use split::{split_dataset, split_dataset_stratified, DatasetSplit};
