use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Fraction of each fold's non-test items held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Seeded shuffle of `0..n`, cut into `k` contiguous test blocks whose sizes
/// differ by at most one; the rest of each fold is split 90/10 into
/// train/validation.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Contract(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Contract(format!("{n} segments cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Folds, &[]));
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    let folds = (0..k)
        .map(|f| {
            let test = order[bounds[f]..bounds[f + 1]].to_vec();
            let rest: Vec<usize> = order[..bounds[f]]
                .iter()
                .chain(&order[bounds[f + 1]..])
                .copied()
                .collect();
            let n_val = ((rest.len() as f64) * VALIDATION_FRACTION).round() as usize;
            let n_val = n_val.clamp(usize::from(rest.len() >= 2), rest.len().saturating_sub(1));
            let (validation, train) = rest.split_at(n_val);
            Fold {
                train: train.to_vec(),
                validation: validation.to_vec(),
                test,
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}
