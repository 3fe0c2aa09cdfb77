use serde::{Deserialize, Serialize};

use super::mlp::AttackModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub auc: f64,
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)`.
    pub roc: Vec<(f64, f64)>,
    pub table: Vec<ThresholdRow>,
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
}

impl AttackReport {
    pub fn positives(&self) -> u64 {
        self.member_scores.len() as u64
    }

    pub fn negatives(&self) -> u64 {
        self.nonmember_scores.len() as u64
    }

    /// ROC points as two-column CSV text.
    pub fn roc_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            s.push_str(&format!("{f},{t}\n"));
        }
        s
    }
}

/// ROC over every distinct score cutpoint, predicting "member" for `score ≥ t`.
/// Tied scores move both rates in one step, so the trapezoid counts ties as ½.
pub fn roc_curve(positives: &[f64], negatives: &[f64]) -> Result<Vec<(f64, f64)>> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("ROC needs at least one positive and one negative"));
    }
    if positives.iter().chain(negatives).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN attack score".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / nn, tp as f64 / np));
    }
    // Exact endpoint even when the last division rounds.
    *roc.last_mut().unwrap() = (1.0, 1.0);
    Ok(roc)
}

pub fn trapezoid_auc(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// `P(score⁺ > score⁻) + ½ P(score⁺ = score⁻)` by counting all pairs.
pub fn auc_pair_concordance(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in positives {
        for n in negatives {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (positives.len() * negatives.len()) as f64
}

/// Report from raw membership scores of members and non-members.
pub fn evaluate_scores(member_scores: Vec<f64>, nonmember_scores: Vec<f64>, thresholds: &[f64]) -> Result<AttackReport> {
    let roc = roc_curve(&member_scores, &nonmember_scores)?;
    let auc = trapezoid_auc(&roc);
    let table = thresholds
        .iter()
        .map(|&t| {
            let tp = member_scores.iter().filter(|&&s| s >= t).count();
            let fp = nonmember_scores.iter().filter(|&&s| s >= t).count();
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            ThresholdRow {
                threshold: t,
                precision,
                recall: tp as f64 / member_scores.len() as f64,
                false_positives: fp as u64,
                false_negatives: (member_scores.len() - tp) as u64,
            }
        })
        .collect();
    Ok(AttackReport {
        auc,
        roc,
        table,
        member_scores,
        nonmember_scores,
    })
}

/// Scores target-train rows (members) and target-out rows (non-members).
pub fn evaluate_attack(
    attack: &AttackModel,
    member_features: &[Vec<f64>],
    nonmember_features: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<AttackReport> {
    if member_features.is_empty() || nonmember_features.is_empty() {
        return Err(Error::invalid("attack evaluation needs members and non-members"));
    }
    evaluate_scores(
        attack.membership_scores(member_features)?,
        attack.membership_scores(nonmember_features)?,
        thresholds,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    const T: [f64; 4] = [0.4, 0.5, 0.6, 0.7];

    #[test]
    fn perfect_separation() {
        let r = evaluate_scores(vec![1.0; 5], vec![0.0; 5], &T).unwrap();
        assert_eq!(r.auc, 1.0);
        let row = &r.table[1];
        assert_eq!((row.precision, row.recall), (1.0, 1.0));
    }

    #[test]
    fn all_equal_is_chance() {
        let r = evaluate_scores(vec![0.3; 4], vec![0.3; 6], &T).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.roc, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn small_example() {
        let pos = [0.9, 0.4];
        let neg = [0.6, 0.1];
        assert_eq!(auc_pair_concordance(&pos, &neg), 0.75);
        let r = evaluate_scores(pos.to_vec(), neg.to_vec(), &T).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn no_predicted_members_gives_zero_precision() {
        let r = evaluate_scores(vec![0.1], vec![0.2], &[0.9]).unwrap();
        assert_eq!(r.table[0].precision, 0.0);
        assert_eq!(r.table[0].false_negatives, 1);
    }

    #[test]
    fn random_scores_match_oracle() {
        let mut rng = stream(5, 7);
        for _ in 0..50 {
            let np = rng.random_range(1..40);
            let nn = rng.random_range(1..40);
            // Coarse grid to force ties.
            let pos: Vec<f64> = (0..np).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
            let neg: Vec<f64> = (0..nn).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
            let r = evaluate_scores(pos.clone(), neg.clone(), &T).unwrap();
            assert!((r.auc - auc_pair_concordance(&pos, &neg)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn roc_is_monotone(pos in prop::collection::vec(0.0f64..1.0, 1..50), neg in prop::collection::vec(0.0f64..1.0, 1..50)) {
            let roc = roc_curve(&pos, &neg).unwrap();
            prop_assert_eq!(roc[0], (0.0, 0.0));
            prop_assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
            for w in roc.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            prop_assert!((trapezoid_auc(&roc) - auc_pair_concordance(&pos, &neg)).abs() < 1e-9);
        }
    }
}
