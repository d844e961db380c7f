//! Seeded end-to-end run: load, filter, split, train both models, evaluate,
//! sweep, select and cluster, then write plot-ready artifacts plus a
//! manifest.
//!
//! All randomness comes from `RunConfig::seed` through [`crate::seed::derive`]:
//! `synth`, `split`, `repartition`, `m1`, `m2` (below `seed`), `kmeans`
//! and `pairwise`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, DatasetSplit, HoldoutSplit, Schema, SplitFractions};
use crate::error::{Error, Result};
use crate::learn::ForestParams;
use crate::pipeline::{self, EvalSummary, Evaluation, SelectionCurve, SweepRow, ThresholdStrategy, TrainedModels};
use crate::seed;
use crate::spatial::{self, ClusterAssignment, ClusterReport, Correlations};
use crate::synth::{self, ScenarioConfig};

pub const SUMMARY_FILE: &str = "summary.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const TEST_ESTIMATES_FILE: &str = "estimates_test.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CENTERS_FILE: &str = "centers.csv";
pub const CORRELATIONS_FILE: &str = "correlations.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SynthScenario {
    Named(String),
    Inline(Box<ScenarioConfig>),
}

impl SynthScenario {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        match self {
            SynthScenario::Named(name) => ScenarioConfig::named(name),
            SynthScenario::Inline(cfg) => Ok((**cfg).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<PathBuf>,
    },
    Synth {
        scenario: SynthScenario,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    #[default]
    Validation,
    Test,
}

fn default_min_rx() -> usize {
    3
}
fn default_fraction_m2() -> f64 {
    0.5
}
fn default_k() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: DataSource,
    /// Overrides the schema's sentinel for CSV input.
    #[serde(default)]
    pub sentinel: Option<f64>,
    #[serde(default = "default_min_rx")]
    pub min_rx: usize,
    #[serde(default)]
    pub fractions: SplitFractions,
    pub seed: u64,
    #[serde(default = "default_fraction_m2")]
    pub fraction_m2: f64,
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default = "pipeline::default_portions")]
    pub portions: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub cluster_set: EvalSet,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(source: DataSource, seed: u64, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            source,
            sentinel: None,
            min_rx: default_min_rx(),
            fractions: SplitFractions::default(),
            seed,
            fraction_m2: default_fraction_m2(),
            sweep: None,
            forest: ForestParams::default(),
            portions: pipeline::default_portions(),
            k: default_k(),
            cluster_set: EvalSet::default(),
            out: out.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.source {
            DataSource::Csv { path, schema } => {
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset {} not found", path.display())));
                }
                if let Some(s) = schema {
                    if !s.is_file() {
                        return Err(Error::Config(format!("schema {} not found", s.display())));
                    }
                }
            }
            DataSource::Synth { scenario } => scenario.resolve()?.validate()?,
        }
        if let Some(s) = self.sentinel {
            if !s.is_finite() {
                return Err(Error::Config("sentinel must be finite".into()));
            }
        }
        if self.min_rx == 0 {
            return Err(Error::Config("min_rx must be at least 1".into()));
        }
        self.fractions.validate()?;
        if !(0.0..1.0).contains(&self.fraction_m2) || self.fraction_m2 == 0.0 {
            return Err(Error::Config(format!(
                "fraction_m2 {} outside (0, 1)",
                self.fraction_m2
            )));
        }
        if let Some(grid) = &self.sweep {
            if grid.is_empty() || grid.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                return Err(Error::Config("sweep grid values must lie in (0, 1)".into()));
            }
        }
        self.forest.validate()?;
        if self.portions.is_empty()
            || self.portions.windows(2).any(|w| !(w[1] > w[0]))
            || self.portions.iter().any(|p| !(*p > 0.0 && *p <= 1.0))
        {
            return Err(Error::Config(
                "portions must be strictly increasing within (0, 1]".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the JSON form with the output directory blanked, so the
    /// same experiment written to two places hashes equally.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub rows_rejected: usize,
}

pub fn load_source(source: &DataSource, sentinel: Option<f64>, seed: u64) -> Result<LoadedData> {
    match source {
        DataSource::Csv { path, schema } => {
            let mut schema = match schema {
                Some(p) => Schema::load(p)?,
                None => Schema::canonical(),
            };
            if let Some(s) = sentinel {
                schema.sentinel = s;
            }
            let ingested = data::ingest(path, &schema)?;
            Ok(LoadedData {
                dataset: ingested.dataset,
                rows_rejected: ingested.report.rejected.len(),
            })
        }
        DataSource::Synth { scenario } => {
            let mut cfg = scenario.resolve()?;
            if let Some(s) = sentinel {
                cfg.sentinel = s;
            }
            Ok(LoadedData {
                dataset: synth::generate(&cfg, seed::derive(seed, "synth"))?,
                rows_rejected: 0,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train_m1: usize,
    pub train_m2: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionHighlight {
    pub portion: f64,
    pub mean_error: f64,
    pub median_error: f64,
    /// Relative reduction against the full validation set.
    pub mean_improvement: f64,
    pub median_improvement: f64,
}

/// Test records kept by a DAE limit taken from the validation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineSelection {
    pub percentile: f64,
    pub dae_threshold: f64,
    pub selected: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepHighlight {
    pub low_fraction_m2: f64,
    pub high_fraction_m2: f64,
    /// M1 mean error at the high fraction minus at the low fraction.
    pub m1_increase_m: f64,
    pub m1_increase_rel: f64,
    /// M2 mean error at the low fraction minus at the high fraction.
    pub m2_improvement_m: f64,
    pub m2_improvement_rel: f64,
}

impl SweepHighlight {
    pub fn of(rows: &[SweepRow]) -> Option<Self> {
        let (lo, hi) = (rows.first()?, rows.last()?);
        if rows.len() < 2 {
            return None;
        }
        Some(SweepHighlight {
            low_fraction_m2: lo.fraction_m2,
            high_fraction_m2: hi.fraction_m2,
            m1_increase_m: hi.m1_mean - lo.m1_mean,
            m1_increase_rel: (hi.m1_mean - lo.m1_mean) / lo.m1_mean,
            m2_improvement_m: lo.m2_mean - hi.m2_mean,
            m2_improvement_rel: (lo.m2_mean - hi.m2_mean) / hi.m2_mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSummary {
    pub k: usize,
    pub evaluated_on: EvalSet,
    pub correlations: Correlations,
    pub pooled_selected_mean: Option<f64>,
    pub pooled_selected_median: Option<f64>,
    pub clusters_with_lower_selected_median: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub records_ingested: usize,
    pub rows_rejected: usize,
    pub records_after_filter: usize,
    pub records_dropped: usize,
    pub split: SplitSizes,
    pub validation: EvalSummary,
    pub test: EvalSummary,
    pub selection: Option<SelectionHighlight>,
    pub online_selection: OnlineSelection,
    pub sweep: Option<SweepHighlight>,
    pub spatial: SpatialSummary,
}

/// Everything a run computes, before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dataset: Dataset,
    pub holdout: HoldoutSplit,
    pub split: DatasetSplit,
    pub models: TrainedModels,
    pub validation: Evaluation,
    pub test: Evaluation,
    pub selection: SelectionCurve,
    pub sweep: Option<Vec<SweepRow>>,
    pub clusters: ClusterAssignment,
    pub cluster_report: ClusterReport,
    pub summary: Summary,
}

/// Filtered dataset and its split; the shared first half of every run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub records_ingested: usize,
    pub rows_rejected: usize,
    pub holdout: HoldoutSplit,
    pub split: DatasetSplit,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let loaded = load_source(&cfg.source, cfg.sentinel, cfg.seed)?;
    let records_ingested = loaded.dataset.len();
    let dataset = loaded.dataset.filter_min_gateways(cfg.min_rx);
    let holdout = data::split(dataset.len(), cfg.fractions, seed::derive(cfg.seed, "split"))?;
    let split = DatasetSplit::from_holdout(&holdout, cfg.fraction_m2, seed::derive(cfg.seed, "repartition"))?;
    Ok(Prepared {
        dataset,
        records_ingested,
        rows_rejected: loaded.rows_rejected,
        holdout,
        split,
    })
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let Prepared {
        dataset,
        records_ingested: ingested,
        rows_rejected,
        holdout,
        split,
    } = prepare(cfg)?;
    let models = pipeline::train_models(&dataset, &split, &cfg.forest, cfg.seed)?;
    let validation = pipeline::evaluate(&models.m1, &models.m2, &dataset, &split.validation)?;
    let test = pipeline::evaluate(&models.m1, &models.m2, &dataset, &split.test)?;

    let selection = pipeline::selection_curve(&validation.records, &cfg.portions)?;
    let selection_highlight = selection.at(0.5).map(|r| SelectionHighlight {
        portion: r.portion,
        mean_error: r.mean_error,
        median_error: r.median_error,
        mean_improvement: 1.0 - r.mean_error / validation.summary.m1_mean,
        median_improvement: 1.0 - r.median_error / validation.summary.m1_median,
    });
    let online_threshold = pipeline::dae_threshold(&validation.records, ThresholdStrategy::Percentile(50.0))?;
    let online_kept = pipeline::select_below(&test.records, online_threshold);
    let kept_errors: Vec<f64> = online_kept.iter().map(|r| r.error_pos).collect();
    let online_selection = OnlineSelection {
        percentile: 50.0,
        dae_threshold: online_threshold,
        selected: kept_errors.len(),
        mean_error: crate::stats::mean(&kept_errors),
        median_error: crate::stats::median(&kept_errors),
    };

    let sweep = match &cfg.sweep {
        Some(grid) => Some(pipeline::repartition_sweep(
            &dataset,
            &holdout,
            grid,
            &cfg.forest,
            cfg.seed,
        )?),
        None => None,
    };

    let truths: Vec<_> = dataset.records().iter().map(|r| r.truth).collect();
    let clusters = spatial::kmeans(&truths, cfg.k, seed::derive(cfg.seed, "kmeans"))?;
    let cluster_records = match cfg.cluster_set {
        EvalSet::Validation => &validation.records,
        EvalSet::Test => &test.records,
    };
    let cluster_report = spatial::cluster_report(&clusters, cluster_records, seed::derive(cfg.seed, "pairwise"))?;

    let summary = Summary {
        seed: cfg.seed,
        records_ingested: ingested,
        rows_rejected,
        records_after_filter: dataset.len(),
        records_dropped: ingested - dataset.len(),
        split: SplitSizes {
            train_m1: split.train_m1.len(),
            train_m2: split.train_m2.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        },
        validation: validation.summary,
        test: test.summary,
        selection: selection_highlight,
        online_selection,
        sweep: sweep.as_deref().and_then(SweepHighlight::of),
        spatial: SpatialSummary {
            k: cfg.k,
            evaluated_on: cfg.cluster_set,
            correlations: cluster_report.correlations,
            pooled_selected_mean: cluster_report.pooled_selected_mean,
            pooled_selected_median: cluster_report.pooled_selected_median,
            clusters_with_lower_selected_median: cluster_report.clusters_with_lower_selected_median(),
        },
    };
    Ok(Outcome {
        dataset,
        holdout,
        split,
        models,
        validation,
        test,
        selection,
        sweep,
        clusters,
        cluster_report,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub records: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub records_ingested: usize,
    /// Fingerprint of the dataset after the gateway-count filter.
    pub dataset: DatasetFingerprint,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Serialized artifacts of an outcome, in write order (manifest last).
pub fn render(cfg: &RunConfig, outcome: &Outcome) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push((SUMMARY_FILE.into(), json(&outcome.summary)?));

    let mut buf = Vec::new();
    pipeline::write_estimates(&outcome.validation.records, &mut buf)?;
    files.push((ESTIMATES_FILE.into(), buf));
    let mut buf = Vec::new();
    pipeline::write_estimates(&outcome.test.records, &mut buf)?;
    files.push((TEST_ESTIMATES_FILE.into(), buf));
    if let Some(rows) = &outcome.sweep {
        let mut buf = Vec::new();
        pipeline::write_sweep(rows, &mut buf)?;
        files.push((SWEEP_FILE.into(), buf));
    }
    let mut buf = Vec::new();
    pipeline::write_selection(&outcome.selection, &mut buf)?;
    files.push((SELECTION_FILE.into(), buf));
    let mut buf = Vec::new();
    spatial::write_cluster_csv(&outcome.cluster_report, &mut buf)?;
    files.push((CLUSTERS_FILE.into(), buf));
    let mut buf = Vec::new();
    spatial::write_centers_csv(&outcome.clusters, &mut buf)?;
    files.push((CENTERS_FILE.into(), buf));
    files.push((CORRELATIONS_FILE.into(), json(&outcome.cluster_report.correlations)?));

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        records_ingested: outcome.summary.records_ingested,
        dataset: DatasetFingerprint {
            records: outcome.dataset.len(),
            content_hash: outcome.dataset.content_hash(),
        },
        artifacts: files
            .iter()
            .map(|(name, bytes)| ArtifactEntry {
                name: name.clone(),
                bytes: bytes.len(),
                sha256: hex::encode(Sha256::digest(bytes)),
            })
            .collect(),
    };
    files.push((MANIFEST_FILE.into(), json(&manifest)?));
    Ok(files)
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(value)?;
    b.push(b'\n');
    Ok(b)
}

/// Writes `files` into `dir`. If any write fails, files already written by
/// this call are removed.
pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub written: Vec<PathBuf>,
}

pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let outcome = execute(cfg)?;
    let files = render(cfg, &outcome)?;
    let written = write_all(&cfg.out, &files)?;
    Ok(RunReport { outcome, written })
}
