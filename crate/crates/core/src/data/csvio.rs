use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{valid_rss, Dataset, Fingerprint, Schema};
use crate::error::{Error, Result};
use crate::geo::LatLon;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostic {
    /// 1-based line in the source file (the header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub rejected: Vec<RowDiagnostic>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub report: IngestReport,
}

pub fn ingest(path: &Path, schema: &Schema) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema)
}

/// Reads a headered CSV. Malformed rows are skipped and listed in the
/// report; structural problems (missing columns) fail the whole read.
pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let cols = schema.resolve(&header)?;
    let gateways: Vec<String> = cols.rss.iter().map(|&i| header[i].clone()).collect();
    let sentinel = schema.sentinel;

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen_ids = HashSet::new();
    for (ordinal, row) in rdr.records().enumerate() {
        report.rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(ordinal as u64 + 2);
                report.rejected.push(RowDiagnostic {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(ordinal as u64 + 2);
        let parsed = parse_row(&row, &header, &cols, sentinel, ordinal).and_then(|fp| {
            if seen_ids.insert(fp.id) {
                Ok(fp)
            } else {
                Err(format!("duplicate id {}", fp.id))
            }
        });
        match parsed {
            Ok(fp) => records.push(fp),
            Err(message) => report.rejected.push(RowDiagnostic { line, message }),
        }
    }
    report.accepted = records.len();
    let dataset = Dataset::new(records, gateways, sentinel)?;
    Ok(Ingested { dataset, report })
}

fn parse_row(
    row: &csv::StringRecord,
    header: &[String],
    cols: &super::schema::ResolvedSchema,
    sentinel: f64,
    ordinal: usize,
) -> std::result::Result<Fingerprint, String> {
    if row.len() != header.len() {
        return Err(format!("expected {} fields, found {}", header.len(), row.len()));
    }
    let number = |i: usize| -> std::result::Result<f64, String> {
        let cell = &row[i];
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("column `{}`: `{cell}` is not a finite number", header[i])),
        }
    };
    let id = match cols.id {
        Some(i) => row[i]
            .parse::<usize>()
            .map_err(|_| format!("column `{}`: `{}` is not a record id", header[i], &row[i]))?,
        None => ordinal,
    };
    let truth = LatLon::new(number(cols.lat)?, number(cols.lon)?).map_err(|e| e.to_string())?;
    let mut rss = Vec::with_capacity(cols.rss.len());
    for &i in &cols.rss {
        let v = number(i)?;
        if v != sentinel && !valid_rss(v) {
            return Err(format!("column `{}`: RSS {v} outside [-200, 0] dBm", header[i]));
        }
        rss.push(v);
    }
    Ok(Fingerprint { id, rss, truth })
}

/// Writes the canonical layout read back by [`Schema::canonical`].
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(dataset.gateway_count() + 3);
    header.push("id".to_string());
    header.extend(dataset.gateways().iter().cloned());
    header.push("lat".into());
    header.push("lon".into());
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for r in dataset.records() {
        fields.clear();
        fields.push(r.id.to_string());
        fields.extend(r.rss.iter().map(f64::to_string));
        fields.push(r.truth.lat().to_string());
        fields.push(r.truth.lon().to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
