use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "val")]
    pub val_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids)
    }
}

/// Random train/val/test partition. Validation and test sizes are the
/// rounded fractions; whatever is left goes to training.
pub fn split_dataset(case_ids: &[String], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let n = case_ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 cases to split, got {n}")));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::invalid(format!("split fractions must be positive: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let unique: BTreeSet<&String> = case_ids.iter().collect();
    if unique.len() != n {
        return Err(Error::invalid("duplicate case ids"));
    }

    let n_val = (fractions[1] * n as f64).round() as usize;
    let n_test = (fractions[2] * n as f64).round() as usize;
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(Error::Degenerate(format!("fractions {fractions:?} over {n} cases give an empty split")));
    }

    // Sorting first makes the split independent of the input order.
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_ids = ids[..n_val].to_vec();
    let mut test_ids = ids[n_val..n_val + n_test].to_vec();
    let mut train_ids = ids[n_val + n_test..].to_vec();
    val_ids.sort();
    test_ids.sort();
    train_ids.sort();
    Ok(DatasetSplit { train_ids, val_ids, test_ids, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case_{i:05}")).collect()
    }

    #[test]
    fn full_cohort_sizes() {
        for seed in [0, 1, 99] {
            let s = split_dataset(&ids(300), [0.7, 0.2, 0.1], seed).unwrap();
            assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (210, 60, 30));
        }
    }

    #[test]
    fn ten_cases() {
        let s = split_dataset(&ids(10), [0.7, 0.2, 0.1], 3).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (7, 2, 1));
        let all: BTreeSet<_> = s.all_ids().collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(&ids(50), [0.6, 0.2, 0.2], 11).unwrap();
        let b = split_dataset(&ids(50), [0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a, b);
        let mut rev = ids(50);
        rev.reverse();
        assert_eq!(split_dataset(&rev, [0.6, 0.2, 0.2], 11).unwrap(), a);
    }

    #[test]
    fn errors() {
        assert!(split_dataset(&ids(2), [0.4, 0.3, 0.3], 0).is_err());
        assert!(split_dataset(&ids(10), [0.7, 0.2, 0.2], 0).is_err());
        assert!(split_dataset(&ids(10), [0.9, 0.0, 0.1], 0).is_err());
        // 4 cases at 10% test rounds to zero test cases
        assert!(matches!(split_dataset(&ids(4), [0.7, 0.2, 0.1], 0), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn split_is_partition(seed in any::<u64>(), n in 10usize..120) {
            let all = ids(n);
            let s = split_dataset(&all, [0.7, 0.2, 0.1], seed).unwrap();
            let mut joined: Vec<&String> = s.all_ids().collect();
            prop_assert_eq!(joined.len(), n);
            joined.sort();
            joined.dedup();
            prop_assert_eq!(joined.len(), n);
        }
    }
}
