use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_models};
use crate::data::{Dataset, DatasetSplit, HoldoutSplit};
use crate::error::{Error, Result};
use crate::learn::ForestParams;
use crate::seed;

/// Validation performance of both models for one share of the pool given to M2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction_m2: f64,
    pub m1_mean: f64,
    pub m1_median: f64,
    pub m2_mean: f64,
    pub m2_median: f64,
}

/// `lo, lo + step, ..., hi` with values rounded to 12 decimals.
pub fn fraction_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("grid {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect())
}

pub fn default_sweep_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// For each fraction: repartition the training pool, fit both models and
/// evaluate them on the shared validation set.
///
/// The repartition shuffle uses `derive(seed, "repartition")` for every
/// fraction, so M2's partitions are nested as the fraction grows and each
/// row equals a standalone run at that fraction with the same seed. Rows are
/// returned in grid order.
pub fn repartition_sweep(
    dataset: &Dataset,
    holdout: &HoldoutSplit,
    grid: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    if let Some(f) = grid.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::InvalidParameter(format!("sweep fraction {f} outside (0, 1)")));
    }
    let repartition_seed = seed::derive(seed, "repartition");
    grid.par_iter()
        .map(|&fraction_m2| {
            let split = DatasetSplit::from_holdout(holdout, fraction_m2, repartition_seed)?;
            let models = train_models(dataset, &split, params, seed)?;
            let s = evaluate(&models.m1, &models.m2, dataset, &split.validation)?.summary;
            Ok(SweepRow {
                fraction_m2,
                m1_mean: s.m1_mean,
                m1_median: s.m1_median,
                m2_mean: s.m2_mean,
                m2_median: s.m2_median,
            })
        })
        .collect()
}
