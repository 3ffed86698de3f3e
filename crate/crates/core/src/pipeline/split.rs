use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::rng::{derive_seed, SplitMix64};

pub const N_FOLDS: usize = 5;
pub const TEST_FRACTION: f64 = 0.15;
pub const MIN_SPLIT_SIZE: usize = 10;

/// Held-out test ids plus five round-robin folds over the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    /// Training ids outside fold `k`.
    pub fn fold_train(&self, k: usize) -> Vec<String> {
        self.folds.iter().enumerate().filter(|&(i, _)| i != k).flat_map(|(_, f)| f.iter().cloned()).collect()
    }

    pub fn fold_val(&self, k: usize) -> &[String] {
        &self.folds[k]
    }
}

pub fn test_size(n: usize) -> usize {
    (TEST_FRACTION * n as f64).round() as usize
}

/// Shuffles with a generator derived from `seed`, takes the first
/// `round(0.15 n)` ids as the test set and deals the rest into folds.
pub fn make_split(ids: &[String], seed: u64) -> Result<SplitPlan, PipelineError> {
    if ids.len() < MIN_SPLIT_SIZE {
        return Err(PipelineError::TooFewRecords { n: ids.len(), min: MIN_SPLIT_SIZE });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(PipelineError::DuplicateId { id: dup.clone(), line: 0 });
    }
    let mut order = ids.to_vec();
    SplitMix64::new(derive_seed(seed, "split", 0)).shuffle(&mut order);
    let train_ids = order.split_off(test_size(ids.len()));
    let test_ids = order;
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (i, id) in train_ids.iter().enumerate() {
        folds[i % N_FOLDS].push(id.clone());
    }
    Ok(SplitPlan { seed, train_ids, test_ids, folds })
}
