use serde::{Deserialize, Serialize};

use super::EstimateRecord;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub portion: f64,
    pub count: usize,
    pub mean_error: f64,
    pub median_error: f64,
    /// DAE of the last record included at this portion.
    pub dae_threshold: f64,
}

/// Positioning error of the lowest-DAE portions of a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCurve {
    pub rows: Vec<SelectionRow>,
}

impl SelectionCurve {
    pub fn at(&self, portion: f64) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| (r.portion - portion).abs() < 1e-12)
    }
}

/// 5%, 10%, ..., 100%.
pub fn default_portions() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// Sorts by DAE (ties by record id) and summarises `error_pos` over the
/// first `ceil(p * N)` records for each portion `p`.
pub fn selection_curve(records: &[EstimateRecord], portions: &[f64]) -> Result<SelectionCurve> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    if portions.is_empty() {
        return Err(Error::InvalidParameter("no portions".into()));
    }
    for w in portions.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter("portions must be strictly increasing".into()));
        }
    }
    if let Some(p) = portions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidParameter(format!("portion {p} outside (0, 1]")));
    }

    let mut sorted: Vec<&EstimateRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.dae.total_cmp(&b.dae).then(a.id.cmp(&b.id)));
    let n = sorted.len();
    let mut rows = Vec::with_capacity(portions.len());
    let mut running_sum = 0.0;
    let mut included = 0;
    let mut prefix: Vec<f64> = Vec::with_capacity(n);
    for &portion in portions {
        // tolerate products such as 0.15 * 100 = 15.000000000000002
        let count = ((portion * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        while included < count {
            running_sum += sorted[included].error_pos;
            prefix.push(sorted[included].error_pos);
            included += 1;
        }
        let mut errs = prefix.clone();
        errs.sort_by(f64::total_cmp);
        rows.push(SelectionRow {
            portion,
            count,
            mean_error: running_sum / count as f64,
            median_error: stats::median_sorted(&errs),
            dae_threshold: sorted[count - 1].dae,
        });
    }
    Ok(SelectionCurve { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStrategy {
    /// Percentile in (0, 100] of the reference DAE distribution.
    Percentile(f64),
    /// Fixed DAE limit in meters.
    Hard(f64),
}

/// Resolves a DAE acceptance limit. With a percentile strategy, the
/// reference (typically the validation set) supplies the distribution.
pub fn dae_threshold(reference: &[EstimateRecord], strategy: ThresholdStrategy) -> Result<f64> {
    match strategy {
        ThresholdStrategy::Hard(v) if v.is_finite() => Ok(v),
        ThresholdStrategy::Hard(v) => Err(Error::InvalidParameter(format!("threshold {v}"))),
        ThresholdStrategy::Percentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::InvalidParameter(format!("percentile {p} outside (0, 100]")));
            }
            if reference.is_empty() {
                return Err(Error::Empty("reference set"));
            }
            let daes: Vec<f64> = reference.iter().map(|r| r.dae).collect();
            stats::percentile(&daes, p)
        }
    }
}

/// Records whose DAE does not exceed `threshold`.
pub fn select_below(records: &[EstimateRecord], threshold: f64) -> Vec<EstimateRecord> {
    records.iter().filter(|r| r.dae <= threshold).cloned().collect()
}
