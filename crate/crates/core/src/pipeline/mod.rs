//! Positioning model (M1), accuracy model (M2) and the analyses built on
//! their joint output.
//!
//! M1 maps RSS vectors to (lat, lon). Its haversine error on a disjoint
//! partition becomes the regression target of M2, which sees the same RSS
//! features and predicts that error (the DAE). Each evaluated message yields
//! an [`EstimateRecord`] with `error_dae = |error_pos - dae|`.

mod io;
mod selection;
mod sweep;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::geo::{haversine, LatLon};
use crate::learn::{fit_extratrees, ForestModel, ForestParams, Matrix};
use crate::seed;
use crate::stats;

pub use io::{read_estimates, write_estimates, write_selection, write_sweep};
pub use selection::{
    dae_threshold, default_portions, select_below, selection_curve, SelectionCurve, SelectionRow, ThresholdStrategy,
};
pub use sweep::{default_sweep_grid, fraction_grid, repartition_sweep, SweepRow};

/// Per-message output of the two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub id: usize,
    pub truth: LatLon,
    pub estimate: LatLon,
    pub error_pos: f64,
    pub dae: f64,
    pub error_dae: f64,
}

impl EstimateRecord {
    /// Negative DAE predictions are clamped to 0 m.
    pub fn new(id: usize, truth: LatLon, estimate: LatLon, dae: f64) -> Self {
        let error_pos = position_error(truth, estimate);
        let dae = dae.max(0.0);
        EstimateRecord {
            id,
            truth,
            estimate,
            error_pos,
            dae,
            error_dae: (error_pos - dae).abs(),
        }
    }
}

pub fn position_error(truth: LatLon, estimate: LatLon) -> f64 {
    haversine(truth, estimate)
}

pub(crate) fn features(dataset: &Dataset, indices: &[usize]) -> Result<Matrix> {
    let records = dataset.records();
    let rows: Vec<&[f64]> = indices
        .iter()
        .map(|&i| {
            records
                .get(i)
                .map(|r| r.rss.as_slice())
                .ok_or_else(|| Error::Split(format!("index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows, dataset.gateway_count())
}

/// M1: RSS vector to location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionModel {
    pub forest: ForestModel,
    /// Dataset indices M1 was fitted on.
    pub trained_on: Vec<usize>,
}

impl PositionModel {
    pub fn estimate(&self, rss: &[f64]) -> Result<LatLon> {
        let p = self.forest.predict_row(rss)?;
        LatLon::new(p[0], p[1])
    }

    pub fn estimate_all(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<LatLon>> {
        let pred = self.forest.predict(&features(dataset, indices)?)?;
        pred.iter_rows().map(|p| LatLon::new(p[0], p[1])).collect()
    }
}

/// M2: RSS vector to expected positioning error in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyModel {
    pub forest: ForestModel,
    pub trained_on: Vec<usize>,
}

impl AccuracyModel {
    pub fn dae(&self, rss: &[f64]) -> Result<f64> {
        Ok(self.forest.predict_row(rss)?[0].max(0.0))
    }

    pub fn dae_all(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
        let pred = self.forest.predict(&features(dataset, indices)?)?;
        Ok(pred.as_slice().iter().map(|v| v.max(0.0)).collect())
    }
}

pub fn train_m1(dataset: &Dataset, train_m1: &[usize], params: &ForestParams, seed: u64) -> Result<PositionModel> {
    if train_m1.is_empty() {
        return Err(Error::Empty("M1 training partition"));
    }
    let x = features(dataset, train_m1)?;
    let targets: Vec<[f64; 2]> = train_m1
        .iter()
        .map(|&i| {
            let t = dataset.records()[i].truth;
            [t.lat(), t.lon()]
        })
        .collect();
    let y = Matrix::from_rows(&targets, 2)?;
    Ok(PositionModel {
        forest: fit_extratrees(&x, &y, params, seed)?,
        trained_on: train_m1.to_vec(),
    })
}

/// Haversine error of M1 on each M2 training record. M1 must not have seen
/// any of them.
pub fn build_m2_targets(m1: &PositionModel, dataset: &Dataset, train_m2: &[usize]) -> Result<Vec<f64>> {
    let seen: HashSet<usize> = m1.trained_on.iter().copied().collect();
    let overlap = train_m2.iter().filter(|i| seen.contains(i)).count();
    if overlap > 0 {
        return Err(Error::PartitionOverlap(overlap));
    }
    let estimates = m1.estimate_all(dataset, train_m2)?;
    Ok(train_m2
        .iter()
        .zip(estimates)
        .map(|(&i, est)| position_error(dataset.records()[i].truth, est))
        .collect())
}

pub fn train_m2(
    dataset: &Dataset,
    train_m2: &[usize],
    targets: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<AccuracyModel> {
    if train_m2.is_empty() {
        return Err(Error::Empty("M2 training partition"));
    }
    if targets.len() != train_m2.len() {
        return Err(Error::DimensionMismatch {
            expected: train_m2.len(),
            got: targets.len(),
        });
    }
    let x = features(dataset, train_m2)?;
    Ok(AccuracyModel {
        forest: fit_extratrees(&x, &Matrix::column(targets), params, seed)?,
        trained_on: train_m2.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub m1: PositionModel,
    pub m2: AccuracyModel,
}

/// Checks the split, then fits M1 with seed `derive(seed, "m1")` and M2 with
/// `derive(seed, "m2")`.
pub fn train_models(
    dataset: &Dataset,
    split: &DatasetSplit,
    params: &ForestParams,
    seed: u64,
) -> Result<TrainedModels> {
    if split.n_records != dataset.len() {
        return Err(Error::Split(format!(
            "split covers {} records, dataset has {}",
            split.n_records,
            dataset.len()
        )));
    }
    split.check()?;
    let m1 = train_m1(dataset, &split.train_m1, params, seed::derive(seed, "m1"))?;
    let targets = build_m2_targets(&m1, dataset, &split.train_m2)?;
    let m2 = train_m2(dataset, &split.train_m2, &targets, params, seed::derive(seed, "m2"))?;
    Ok(TrainedModels { m1, m2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub m1_mean: f64,
    pub m1_median: f64,
    pub m2_mean: f64,
    pub m2_median: f64,
}

impl EvalSummary {
    pub fn of(records: &[EstimateRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let pos: Vec<f64> = records.iter().map(|r| r.error_pos).collect();
        let dae: Vec<f64> = records.iter().map(|r| r.error_dae).collect();
        Ok(EvalSummary {
            n: records.len(),
            m1_mean: stats::mean(&pos).unwrap_or_default(),
            m1_median: stats::median(&pos).unwrap_or_default(),
            m2_mean: stats::mean(&dae).unwrap_or_default(),
            m2_median: stats::median(&dae).unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<EstimateRecord>,
    pub summary: EvalSummary,
}

pub fn evaluate(m1: &PositionModel, m2: &AccuracyModel, dataset: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let estimates = m1.estimate_all(dataset, indices)?;
    let daes = m2.dae_all(dataset, indices)?;
    let records: Vec<EstimateRecord> = indices
        .iter()
        .zip(estimates)
        .zip(daes)
        .map(|((&i, est), dae)| {
            let r = &dataset.records()[i];
            EstimateRecord::new(r.id, r.truth, est, dae)
        })
        .collect();
    let summary = EvalSummary::of(&records)?;
    Ok(Evaluation { records, summary })
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::data::{Dataset, Fingerprint, DEFAULT_SENTINEL_DBM};
    use crate::geo::LatLon;
    use crate::seed;
    use rand::Rng;

    /// Four gateways on a square; RSS falls off with log distance.
    pub fn grid_dataset(n: usize, s: u64) -> Dataset {
        let gws = [(51.20, 4.39), (51.20, 4.42), (51.22, 4.39), (51.22, 4.42)];
        let mut rng = seed::rng(s);
        let records = (0..n)
            .map(|id| {
                let truth = LatLon::new(rng.random_range(51.20..51.22), rng.random_range(4.39..4.42)).unwrap();
                let rss = gws
                    .iter()
                    .map(|&(la, lo)| {
                        let d = crate::geo::haversine(truth, LatLon::new(la, lo).unwrap()).max(10.0);
                        (-40.0 - 30.0 * d.log10() + rng.random_range(-4.0..4.0)).clamp(-199.0, 0.0)
                    })
                    .collect();
                Fingerprint { id, rss, truth }
            })
            .collect();
        let names = (0..4).map(|i| format!("gw{i}")).collect();
        Dataset::new(records, names, DEFAULT_SENTINEL_DBM).unwrap()
    }
}
