//! Labeled dataset container shared by training, attacks and the harness.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, d]` feature matrix.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim("dataset features must be a matrix"));
        }
        if features.rows() != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::invalid("a classification dataset needs at least 2 classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Largest input norm, the `R` of the input-ball assumption.
    pub fn max_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| crate::tensor::l2_norm(self.features.row(i)))
            .fold(0.0, f64::max)
    }
}

/// Two isotropic Gaussian classes in `d` dimensions with means `±separation/2`
/// along the all-ones direction (normalized). Classes alternate so the first
/// `2k` points are exactly balanced.
pub fn gaussian_blobs<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    separation: f64,
    noise: f64,
    positive_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("blobs need n >= 1 and d >= 1"));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::invalid("positive fraction must be in [0, 1]"));
    }
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < n_pos)).collect();
    if (positive_fraction - 0.5).abs() < 1e-12 {
        labels = (0..n).map(|i| i % 2).collect();
    }
    let dir = 1.0 / (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    for &label in &labels {
        let sign = if label == 1 { 1.0 } else { -1.0 };
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            data.push(sign * 0.5 * separation * dir + noise * z);
        }
    }
    Dataset::new(Tensor::matrix(n, d, data), labels, 2)
}

/// The two-moons toy problem embedded in `d >= 2` dimensions; coordinates past
/// the first two carry pure noise.
pub fn two_moons<R: Rng + ?Sized>(n: usize, d: usize, noise: f64, rng: &mut R) -> Result<Dataset> {
    if n == 0 || d < 2 {
        return Err(Error::invalid("moons need n >= 1 and d >= 2"));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        data.push(x + noise * zx);
        data.push(y + noise * zy);
        for _ in 2..d {
            let z: f64 = StandardNormal.sample(rng);
            data.push(noise * z);
        }
        labels.push(label);
    }
    Dataset::new(Tensor::matrix(n, d, data), labels, 2)
}

/// Random subsample of `keep` points (all points if `keep >= len`).
pub fn subsample<R: Rng + ?Sized>(data: &Dataset, keep: usize, rng: &mut R) -> Dataset {
    if keep >= data.len() {
        return data.clone();
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.truncate(keep);
    idx.sort_unstable();
    data.subset(&idx)
}
