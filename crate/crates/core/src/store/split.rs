//! Deterministic, label-stratified train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, StateDataset, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, StoreError> {
        let f = Self { train, val, test };
        let parts = [train, val, test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(StoreError::BadFractions((train, val, test)));
        }
        Ok(f)
    }

    /// Split sizes for `n` items by the largest-remainder rule; ties in the
    /// remainder go to the earlier split.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.val, self.test].map(|f| f * n as f64);
        let mut sizes = quotas.map(|q| q.floor() as usize);
        let mut left = n - sizes.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Partitions `dataset` into (train, val, test).
///
/// Each label class is shuffled with `seed` and the classes are interleaved by
/// fractional rank, so every prefix of the merged order carries each class in
/// proportion. Consecutive runs of that order become the three splits; each
/// split keeps the source order of its instances.
pub fn split(dataset: &StateDataset, fractions: SplitFractions, seed: u64) -> Result<(StateDataset, StateDataset, StateDataset), StoreError> {
    let n = dataset.len();
    if n < 3 {
        return Err(StoreError::TooSmallToSplit(n));
    }
    let fractions = SplitFractions::new(fractions.train, fractions.val, fractions.test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (class_rank, label) in [Label::Correct, Label::Incorrect, Label::Unlabeled].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..n).filter(|&i| dataset.instances()[i].label() == label).collect();
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, class_rank, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let [n_train, n_val, _] = fractions.sizes(n);
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();
    let mut parts = [order[..n_train].to_vec(), order[n_train..n_train + n_val].to_vec(), order[n_train + n_val..].to_vec()];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    let [a, b, c] = parts;
    Ok((dataset.subset(&a), dataset.subset(&b), dataset.subset(&c)))
}
