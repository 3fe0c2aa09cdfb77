use serde::{Deserialize, Serialize};

use super::net::ResidualNet;
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::rng::NoiseSource;
use crate::tensor::Tensor;

/// Anything that maps a batch to class probabilities `[n, K]`.
pub trait Classifier: Sync {
    fn classes(&self) -> usize;
    fn predict_proba(&self, x: &Tensor, rng: &mut dyn NoiseSource) -> Result<Tensor>;
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        out.extend(softmax(logits.row(r)));
    }
    Tensor::matrix(logits.rows(), k, out)
}

impl Classifier for ResidualNet {
    fn classes(&self) -> usize {
        self.arch.classes
    }

    fn predict_proba(&self, x: &Tensor, rng: &mut dyn NoiseSource) -> Result<Tensor> {
        Ok(softmax_rows(&self.predict_logits(x, rng)?))
    }
}

/// `k` independently trained copies whose softmax outputs are averaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<ResidualNet>,
}

impl EnsembleModel {
    pub fn new(members: Vec<ResidualNet>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        for m in &members[1..] {
            if m.arch.input_dim != first.arch.input_dim
                || m.arch.blocks != first.arch.blocks
                || m.arch.classes != first.arch.classes
                || m.noise != first.noise
            {
                return Err(Error::invalid("ensemble members must share architecture and noise"));
            }
        }
        Ok(Self { members })
    }

    /// `k` members initialized from the streams `(master_seed, member index)`.
    pub fn init(
        k: usize,
        arch: &super::ArchConfig,
        noise: super::NoiseConfig,
        master_seed: u64,
    ) -> Result<Self> {
        let members = (0..k)
            .map(|i| {
                let mut rng = crate::rng::stream(
                    crate::rng::derive_seed(master_seed, crate::rng::tags::MEMBER_BASE + i as u64),
                    crate::rng::tags::INIT,
                );
                ResidualNet::new(arch.clone(), noise, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Classifier for EnsembleModel {
    fn classes(&self) -> usize {
        self.members[0].arch.classes
    }

    fn predict_proba(&self, x: &Tensor, rng: &mut dyn NoiseSource) -> Result<Tensor> {
        let probs = self
            .members
            .iter()
            .map(|m| m.predict_proba(x, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_probabilities(&probs))
    }
}

/// Elementwise mean of equally shaped probability tables.
pub(crate) fn mean_probabilities(probs: &[Tensor]) -> Tensor {
    let mut acc = probs[0].clone();
    for p in &probs[1..] {
        for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
            *a += b;
        }
    }
    acc.scale(1.0 / probs.len() as f64);
    acc
}

/// Mean of the members' softmax outputs.
pub fn ensemble_predict(ens: &EnsembleModel, x: &Tensor, rng: &mut dyn NoiseSource) -> Result<Tensor> {
    ens.predict_proba(x, rng)
}
