use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, task_rng};

/// Fractions of the train / validation / test sets.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.60, 0.15, 0.25];

/// Disjoint row-index sets covering `0..n`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Uniform random three-way partition.
///
/// Train and validation sizes are `round(n * fraction)`; the test set takes
/// the remainder, which keeps every set within one row of its target.
pub fn make_split(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(Error::validation(format!(
            "split needs at least 10 rows, got {n}"
        )));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::validation(format!(
            "split fractions must lie in [0, 1], got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::validation(format!(
            "split fractions sum to {sum}, not 1"
        )));
    }

    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut task_rng(seed, streams::SPLIT));

    let mut train = perm[..n_train].to_vec();
    let mut validation = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}
