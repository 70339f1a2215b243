use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{class_counts, DataError, Dataset};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Per-class shuffle, then `floor((1 - train_fraction) * n_class)` rows of
/// each class go to test. Index lists come back sorted.
pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitIndices, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let (negatives, positives) = class_counts(d);
    if negatives == 0 || positives == 0 {
        return Err(DataError::SingleClass { negatives, positives });
    }
    let mut r = rng::seeded(seed);
    let mut train_idx = Vec::with_capacity(d.len());
    let mut test_idx = Vec::new();
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == label).collect();
        idx.shuffle(&mut r);
        // The nudge keeps 0.2 * 284_315 = 56_863 from flooring to 56_862.
        let n_test = ((1.0 - train_fraction) * idx.len() as f64 + 1e-9).floor() as usize;
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitIndices {
        train_idx,
        test_idx,
        seed,
    })
}
