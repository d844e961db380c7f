//! Plot-ready CSV artifacts: one column per series.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EstimateRecord, SelectionCurve, SweepRow};
use crate::error::{Error, Result};
use crate::geo::LatLon;

#[derive(Serialize, Deserialize)]
struct EstimateRow {
    id: usize,
    truth_lat: f64,
    truth_lon: f64,
    est_lat: f64,
    est_lon: f64,
    error_pos: f64,
    dae: f64,
    error_dae: f64,
}

pub fn write_estimates<W: Write>(records: &[EstimateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(EstimateRow {
            id: r.id,
            truth_lat: r.truth.lat(),
            truth_lon: r.truth.lon(),
            est_lat: r.estimate.lat(),
            est_lon: r.estimate.lon(),
            error_pos: r.error_pos,
            dae: r.dae,
            error_dae: r.error_dae,
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

/// Reads an estimates CSV, rejecting rows whose `error_dae` is not exactly
/// `|error_pos - dae|`.
pub fn read_estimates<R: Read>(reader: R) -> Result<Vec<EstimateRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: EstimateRow = row?;
        if row.error_dae != (row.error_pos - row.dae).abs() || row.error_pos < 0.0 || row.dae < 0.0 {
            return Err(Error::Schema(format!("record {}: inconsistent error columns", row.id)));
        }
        out.push(EstimateRecord {
            id: row.id,
            truth: LatLon::new(row.truth_lat, row.truth_lon)?,
            estimate: LatLon::new(row.est_lat, row.est_lon)?,
            error_pos: row.error_pos,
            dae: row.dae,
            error_dae: row.error_dae,
        });
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_selection<W: Write>(curve: &SelectionCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &curve.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}
