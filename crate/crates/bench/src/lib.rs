//! Shared inputs for the benchmarks.

use dae_core::data::Dataset;
use dae_core::geo::LatLon;
use dae_core::learn::Matrix;
use dae_core::synth::{self, ScenarioConfig};

pub struct Fixture {
    pub dataset: Dataset,
    pub x: Matrix,
    pub y: Matrix,
    pub truths: Vec<LatLon>,
}

/// Default synthetic scenario with `n` messages, as feature and target matrices.
pub fn fixture(n: usize) -> Fixture {
    let cfg = ScenarioConfig {
        n_messages: n,
        ..ScenarioConfig::default()
    };
    let dataset = synth::generate(&cfg, 1).expect("synthetic dataset");
    let rows: Vec<&[f64]> = dataset.records().iter().map(|r| r.rss.as_slice()).collect();
    let x = Matrix::from_rows(&rows, dataset.gateway_count()).expect("features");
    let targets: Vec<[f64; 2]> = dataset
        .records()
        .iter()
        .map(|r| [r.truth.lat(), r.truth.lon()])
        .collect();
    let y = Matrix::from_rows(&targets, 2).expect("targets");
    let truths = dataset.records().iter().map(|r| r.truth).collect();
    Fixture { dataset, x, y, truths }
}
