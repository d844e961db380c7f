//! Fingerprint datasets: ingestion, gateway-count filtering and seeded
//! partitioning into the M1/M2 training, validation and test sets.

mod csvio;
mod schema;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::LatLon;

pub use csvio::{ingest, ingest_reader, write_csv, write_csv_file, IngestReport, Ingested, RowDiagnostic};
pub use schema::{RssColumns, Schema};
pub use split::{repartition, split, DatasetSplit, HoldoutSplit, SplitFractions};

/// Placeholder RSS (dBm) for a gateway that did not receive the message.
pub const DEFAULT_SENTINEL_DBM: f64 = -200.0;

/// Valid range for a received RSS value, in dBm.
pub const RSS_RANGE_DBM: (f64, f64) = (-200.0, 0.0);

/// One uplink message: RSS per gateway plus its ground-truth location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// Ordinal of the source row.
    pub id: usize,
    pub rss: Vec<f64>,
    pub truth: LatLon,
}

impl Fingerprint {
    pub fn receiving_gateways(&self, sentinel: f64) -> usize {
        self.rss.iter().filter(|&&v| v != sentinel).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Fingerprint>,
    gateways: Vec<String>,
    sentinel: f64,
}

impl Dataset {
    pub fn new(records: Vec<Fingerprint>, gateways: Vec<String>, sentinel: f64) -> Result<Self> {
        if gateways.is_empty() {
            return Err(Error::Schema("dataset needs at least one gateway column".into()));
        }
        if !sentinel.is_finite() {
            return Err(Error::NonFinite("sentinel"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.rss.len() != gateways.len() {
                return Err(Error::DimensionMismatch {
                    expected: gateways.len(),
                    got: r.rss.len(),
                });
            }
            if !seen.insert(r.id) {
                return Err(Error::Schema(format!("duplicate record id {}", r.id)));
            }
            for &v in &r.rss {
                if v != sentinel && !valid_rss(v) {
                    return Err(Error::Schema(format!("record {}: RSS {v} outside [-200, 0] dBm", r.id)));
                }
            }
        }
        Ok(Dataset {
            records,
            gateways,
            sentinel,
        })
    }

    pub fn records(&self) -> &[Fingerprint] {
        &self.records
    }

    pub fn gateways(&self) -> &[String] {
        &self.gateways
    }

    pub fn gateway_count(&self) -> usize {
        self.gateways.len()
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps the records received by at least `min_rx` gateways, in order.
    pub fn filter_min_gateways(&self, min_rx: usize) -> Dataset {
        let records = self
            .records
            .iter()
            .filter(|r| r.receiving_gateways(self.sentinel) >= min_rx)
            .cloned()
            .collect();
        Dataset {
            records,
            gateways: self.gateways.clone(),
            sentinel: self.sentinel,
        }
    }

    /// Hex SHA-256 over gateway names, sentinel and every record field.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for g in &self.gateways {
            h.update(g.as_bytes());
            h.update([0u8]);
        }
        h.update(self.sentinel.to_bits().to_le_bytes());
        for r in &self.records {
            h.update((r.id as u64).to_le_bytes());
            for v in &r.rss {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(r.truth.lat().to_bits().to_le_bytes());
            h.update(r.truth.lon().to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn valid_rss(v: f64) -> bool {
    v.is_finite() && (RSS_RANGE_DBM.0..=RSS_RANGE_DBM.1).contains(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(id: usize, rss: &[f64]) -> Fingerprint {
        Fingerprint {
            id,
            rss: rss.to_vec(),
            truth: LatLon::new(51.2, 4.4).unwrap(),
        }
    }

    fn gws(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("gw{i}")).collect()
    }

    fn sample() -> Dataset {
        let s = DEFAULT_SENTINEL_DBM;
        Dataset::new(
            vec![
                fp(0, &[-100.0, -110.0, -120.0]),
                fp(1, &[s, s, s]),
                fp(2, &[-90.0, s, -95.0]),
                fp(3, &[-80.0, s, s]),
            ],
            gws(3),
            s,
        )
        .unwrap()
    }

    #[test]
    fn filter_keeps_records_with_enough_receptions() {
        let d = sample();
        let kept: Vec<usize> = d.filter_min_gateways(2).records().iter().map(|r| r.id).collect();
        assert_eq!(kept, vec![0, 2]);
        let kept: Vec<usize> = d.filter_min_gateways(1).records().iter().map(|r| r.id).collect();
        assert_eq!(kept, vec![0, 2, 3]);
    }

    #[test]
    fn all_sentinel_record_dropped_at_min_rx_one() {
        let d = sample().filter_min_gateways(1);
        assert!(d.records().iter().all(|r| r.id != 1));
    }

    #[test]
    fn filter_is_identity_when_all_qualify_and_idempotent() {
        let d = sample().filter_min_gateways(2);
        assert_eq!(d.filter_min_gateways(2), d);
        assert_eq!(d.filter_min_gateways(1), d);
    }

    #[test]
    fn constructor_enforces_invariants() {
        let s = DEFAULT_SENTINEL_DBM;
        assert!(Dataset::new(vec![fp(0, &[-1.0])], vec![], s).is_err());
        assert!(Dataset::new(vec![fp(0, &[-1.0, -2.0])], gws(1), s).is_err());
        assert!(Dataset::new(vec![fp(0, &[-1.0]), fp(0, &[-2.0])], gws(1), s).is_err());
        assert!(Dataset::new(vec![fp(0, &[5.0])], gws(1), s).is_err());
        assert!(Dataset::new(vec![fp(0, &[-201.0])], gws(1), s).is_err());
        assert!(Dataset::new(vec![fp(0, &[-201.0])], gws(1), -201.0).is_ok());
    }

    #[test]
    fn content_hash_tracks_values() {
        let a = sample();
        let mut records = a.records().to_vec();
        records[0].rss[0] = -100.5;
        let b = Dataset::new(records, gws(3), DEFAULT_SENTINEL_DBM).unwrap();
        assert_eq!(a.content_hash(), sample().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
