use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Record indices of a held-out test set plus cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Split {
    /// `(train, validation)` indices using fold `k` for validation.
    pub fn fold(&self, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if k >= self.folds.len() {
            return Err(Error::invalid("split", format!("fold {k} of {}", self.folds.len())));
        }
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        Ok((train, self.folds[k].clone()))
    }
}

/// Seeded shuffle, `round(n * test_fraction)` records held out, the rest
/// dealt into `folds` near-equal contiguous parts (earlier folds take the
/// remainder).
pub fn split_dataset(n: usize, test_fraction: f64, folds: usize, seed: u64) -> Result<Split> {
    if folds == 0 || n < folds + 1 {
        return Err(Error::invalid("split_dataset", format!("{n} records cannot fill {folds} folds and a test set")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("split_dataset", format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - folds);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, rest) = order.split_at(n_test);
    let (base, extra) = (rest.len() / folds, rest.len() % folds);
    let mut parts = Vec::with_capacity(folds);
    let mut at = 0;
    for k in 0..folds {
        let size = base + usize::from(k < extra);
        parts.push(rest[at..at + size].to_vec());
        at += size;
    }
    Ok(Split {
        test: test.to_vec(),
        folds: parts,
    })
}
