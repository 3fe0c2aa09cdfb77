use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four disjoint, equally sized index sets over a pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub shadow_train: Vec<usize>,
    pub shadow_out: Vec<usize>,
    pub target_train: Vec<usize>,
    pub target_out: Vec<usize>,
}

impl DatasetSplit {
    fn from_quarters(mut q: [Vec<usize>; 4]) -> Self {
        for part in q.iter_mut() {
            part.sort_unstable();
        }
        let [shadow_train, shadow_out, target_train, target_out] = q;
        Self {
            shadow_train,
            shadow_out,
            target_train,
            target_out,
        }
    }

    pub fn quarter_len(&self) -> usize {
        self.shadow_train.len()
    }

    pub fn parts(&self) -> [&[usize]; 4] {
        [&self.shadow_train, &self.shadow_out, &self.target_train, &self.target_out]
    }
}

/// Uniform random partition of `0..n` into four quarters; the remainder of
/// `n mod 4` points is discarded.
pub fn split_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DatasetSplit> {
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 points to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let q = n / 4;
    Ok(DatasetSplit::from_quarters([
        idx[0..q].to_vec(),
        idx[q..2 * q].to_vec(),
        idx[2 * q..3 * q].to_vec(),
        idx[3 * q..4 * q].to_vec(),
    ]))
}

/// Class-balanced variant: each class is shuffled and dealt evenly into the
/// four quarters, dropping at most three points per class.
pub fn split_dataset_stratified<R: Rng + ?Sized>(labels: &[usize], classes: usize, rng: &mut R) -> Result<DatasetSplit> {
    let mut quarters: [Vec<usize>; 4] = Default::default();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let q = members.len() / 4;
        for (k, quarter) in quarters.iter_mut().enumerate() {
            quarter.extend_from_slice(&members[k * q..(k + 1) * q]);
        }
    }
    if quarters[0].is_empty() {
        return Err(Error::invalid("too few points per class to split"));
    }
    Ok(DatasetSplit::from_quarters(quarters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::collections::HashSet;

    fn assert_disjoint(s: &DatasetSplit) {
        let parts = s.parts();
        for a in 0..4 {
            for b in (a + 1)..4 {
                for x in parts[a] {
                    assert!(!parts[b].contains(x));
                }
            }
        }
    }

    #[test]
    fn eight_points() {
        let s = split_dataset(8, &mut stream(1, 6)).unwrap();
        assert!(s.parts().iter().all(|p| p.len() == 2));
        assert_disjoint(&s);
        let all: HashSet<usize> = s.parts().iter().flat_map(|p| p.iter().copied()).collect();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn ten_points_drop_two() {
        let s = split_dataset(10, &mut stream(2, 6)).unwrap();
        assert!(s.parts().iter().all(|p| p.len() == 2));
        assert_disjoint(&s);
    }

    #[test]
    fn reproducible() {
        assert_eq!(split_dataset(100, &mut stream(3, 6)).unwrap(), split_dataset(100, &mut stream(3, 6)).unwrap());
        assert!(split_dataset(3, &mut stream(3, 6)).is_err());
    }

    #[test]
    fn stratified_balances_classes() {
        let labels: Vec<usize> = (0..103).map(|i| usize::from(i % 3 == 0)).collect();
        let s = split_dataset_stratified(&labels, 2, &mut stream(4, 6)).unwrap();
        assert_disjoint(&s);
        let ones = |p: &[usize]| p.iter().filter(|&&i| labels[i] == 1).count();
        let counts: Vec<usize> = s.parts().iter().map(|p| ones(p)).collect();
        assert!(counts.iter().all(|&c| c == counts[0]));
        assert!(s.parts().iter().all(|p| p.len() == s.quarter_len()));
    }
}
