use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Smallest dataset accepted by [`split`].
pub const MIN_SPLIT_RECORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Split(format!("fractions {parts:?} must each lie in [0, 1]")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Train pool / validation / test before the pool is shared between M1 and M2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle of `0..n`, then contiguous slicing into train, validation
/// and test. Validation and test sizes are rounded; train takes the rest.
pub fn split(n: usize, fractions: SplitFractions, seed: u64) -> Result<HoldoutSplit> {
    fractions.validate()?;
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::Split(format!(
            "{n} records; at least {MIN_SPLIT_RECORDS} are required"
        )));
    }
    let n_val = (fractions.validation * n as f64).round() as usize;
    let n_test = (fractions.test * n as f64).round() as usize;
    if n_val + n_test > n {
        return Err(Error::Split("validation and test exceed the dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_train = n - n_val - n_test;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(HoldoutSplit {
        train: sorted(&order[..n_train]),
        validation: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
        seed,
    })
}

/// Seeded division of the training pool into (M1, M2) parts with
/// `|M2| = round(fraction_m2 * |pool|)`.
pub fn repartition(pool: &[usize], fraction_m2: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction_m2) {
        return Err(Error::Split(format!("fraction_m2 {fraction_m2} outside [0, 1]")));
    }
    let n_m2 = (fraction_m2 * pool.len() as f64).round() as usize;
    let mut order = pool.to_vec();
    order.shuffle(&mut seed::rng(seed));
    let mut m2 = order[..n_m2].to_vec();
    let mut m1 = order[n_m2..].to_vec();
    m1.sort_unstable();
    m2.sort_unstable();
    Ok((m1, m2))
}

/// The four disjoint index sets used by one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_m1: Vec<usize>,
    pub train_m2: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Number of records the indices refer to.
    pub n_records: usize,
}

impl DatasetSplit {
    pub fn from_holdout(holdout: &HoldoutSplit, fraction_m2: f64, repartition_seed: u64) -> Result<Self> {
        let (train_m1, train_m2) = repartition(&holdout.train, fraction_m2, repartition_seed)?;
        let n = holdout.train.len() + holdout.validation.len() + holdout.test.len();
        let s = DatasetSplit {
            train_m1,
            train_m2,
            validation: holdout.validation.clone(),
            test: holdout.test.clone(),
            seed: holdout.seed,
            n_records: n,
        };
        s.check()?;
        Ok(s)
    }

    /// Pairwise disjoint and covering `0..n_records`.
    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.n_records);
        for (name, set) in [
            ("train_m1", &self.train_m1),
            ("train_m2", &self.train_m2),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for &i in set {
                if i >= self.n_records {
                    return Err(Error::Split(format!("{name} index {i} out of range")));
                }
                if !seen.insert(i) {
                    return Err(Error::Split(format!("index {i} appears in more than one set ({name})")));
                }
            }
        }
        if seen.len() != self.n_records {
            return Err(Error::Split(format!(
                "sets cover {} of {} records",
                seen.len(),
                self.n_records
            )));
        }
        Ok(())
    }
}
