use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax − onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::invalid("softmax cross-entropy needs at least 2 classes"));
    }
    if label >= k {
        return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let loss = (lse - logits[label]).max(0.0);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Summed loss over a `[n, K]` batch and the per-example gradients (not
/// averaged).
pub fn softmax_cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.row(s), label)?;
        total += l;
        grad.row_mut(s).copy_from_slice(&g);
    }
    Ok((total, grad))
}
