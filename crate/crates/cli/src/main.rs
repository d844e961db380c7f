//! `dae`: seeded experiment runner for RSS fingerprint positioning with
//! dynamic accuracy estimation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dae_core::data::{self, Schema};
use dae_core::experiment::{self, DataSource, EvalSet, RunConfig, SynthScenario};
use dae_core::learn::ForestModel;
use dae_core::pipeline::{self, AccuracyModel, PositionModel, ThresholdStrategy};
use dae_core::{seed, spatial};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "dae",
    version,
    about = "Fingerprint positioning with dynamic accuracy estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment: train, evaluate, sweep, select, cluster, write artifacts.
    Run(RunArgs),
    /// Generate a synthetic dataset in the canonical CSV layout.
    Synth(SynthArgs),
    /// Ingest a CSV and report accepted/rejected rows and the gateway filter.
    IngestCheck(CommonArgs),
    /// Write the seeded train/validation/test split and repartition.
    Split(CommonArgs),
    /// Fit M1 and M2 and save them with their split.
    Train(CommonArgs),
    /// Score saved models on the validation or test set.
    Eval(EvalArgs),
    /// Repartition sweep over fraction_m2.
    Sweep(CommonArgs),
    /// Selection curve from an estimates CSV.
    Select(SelectArgs),
    /// k-means over ground truths, with per-cluster statistics.
    Cluster(ClusterArgs),
    /// Merge the artifacts of a run directory into one plot-ready JSON bundle.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long, conflicts_with = "synth")]
    dataset: Option<PathBuf>,
    /// Column mapping for --dataset (key = value lines or JSON).
    #[arg(long, requires = "dataset")]
    schema: Option<PathBuf>,
    /// Synthetic scenario name (`default`, `uniform`) or a JSON scenario file.
    #[arg(long)]
    synth: Option<String>,
    /// RSS value meaning "not received" [default: -200].
    #[arg(long, allow_hyphen_values = true)]
    sentinel: Option<f64>,
    /// Minimum receiving gateways per record [default: 3].
    #[arg(long)]
    min_rx: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Share of the training pool given to M2 [default: 0.5].
    #[arg(long)]
    fraction_m2: Option<f64>,
    /// Sweep grid as lo:hi:step.
    #[arg(long)]
    sweep: Option<String>,
    /// Trees per forest [default: 100].
    #[arg(long)]
    trees: Option<usize>,
    /// Number of k-means clusters [default: 20].
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated selection portions in (0, 1].
    #[arg(long)]
    portions: Option<String>,
    /// Output directory (or file, for `synth`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Records summarised per cluster.
    #[arg(long, value_enum)]
    cluster_set: Option<SetArg>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Validation,
    Test,
}

impl From<SetArg> for EvalSet {
    fn from(s: SetArg) -> Self {
        match s {
            SetArg::Validation => EvalSet::Validation,
            SetArg::Test => EvalSet::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory written by `train`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    set: SetArg,
}

#[derive(Args)]
struct SelectArgs {
    /// Estimates CSV the curve is computed on.
    #[arg(long)]
    estimates: PathBuf,
    /// Comma-separated portions in (0, 1] [default: 0.05 steps].
    #[arg(long)]
    portions: Option<String>,
    /// Keep records at or below this DAE percentile of --estimates ...
    #[arg(long, conflicts_with = "threshold")]
    percentile: Option<f64>,
    /// ... or at or below this DAE in meters.
    #[arg(long)]
    threshold: Option<f64>,
    /// Records the threshold is applied to [default: --estimates].
    #[arg(long)]
    apply_to: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Estimates CSV to summarise per cluster.
    #[arg(long)]
    estimates: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run output directory.
    #[arg(long)]
    dir: PathBuf,
    /// Bundle path [default: <dir>/report.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Problems with the request itself, reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| usage(format!("`{t}` is not a number"))))
        .collect()
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(usage(format!("sweep `{s}` is not lo:hi:step")));
    };
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("`{t}` is not a number")))
    };
    pipeline::fraction_grid(num(lo)?, num(hi)?, num(step)?).map_err(|e| usage(e.to_string()))
}

fn synth_source(arg: &str) -> Result<DataSource> {
    let path = Path::new(arg);
    let scenario = if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        SynthScenario::Inline(Box::new(
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        ))
    } else {
        SynthScenario::Named(arg.to_string())
    };
    Ok(DataSource::Synth { scenario })
}

fn build_config(a: &CommonArgs) -> Result<RunConfig> {
    let base = match &a.config {
        Some(p) => Some(RunConfig::load(p).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let source = match (&a.dataset, &a.synth) {
        (Some(path), _) => Some(DataSource::Csv {
            path: path.clone(),
            schema: a.schema.clone(),
        }),
        (None, Some(s)) => Some(synth_source(s)?),
        (None, None) => None,
    };
    let mut cfg = match base {
        Some(mut c) => {
            if let Some(s) = source {
                c.source = s;
            }
            if let Some(seed) = a.seed {
                c.seed = seed;
            }
            c
        }
        None => {
            let source = source.ok_or_else(|| usage("one of --dataset, --synth or --config is required"))?;
            let seed = a.seed.ok_or_else(|| usage("--seed is required"))?;
            RunConfig::new(source, seed, "out")
        }
    };
    if let Some(v) = a.sentinel {
        cfg.sentinel = Some(v);
    }
    if let Some(v) = a.min_rx {
        cfg.min_rx = v;
    }
    if let Some(v) = a.fraction_m2 {
        cfg.fraction_m2 = v;
    }
    if let Some(s) = &a.sweep {
        cfg.sweep = Some(parse_grid(s)?);
    }
    if let Some(v) = a.trees {
        cfg.forest.n_trees = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(s) = &a.portions {
        cfg.portions = parse_list(s)?;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = build_config(&args.common)?;
    if let Some(s) = args.cluster_set {
        cfg.cluster_set = s.into();
    }
    let report = experiment::run(&cfg)?;
    let s = &report.outcome.summary;
    println!(
        "{} records after filter; validation M1 mean {:.1} m, M2 mean {:.1} m",
        s.records_after_filter, s.validation.m1_mean, s.validation.m2_mean
    );
    for p in &report.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut common = args.common.clone();
    if common.synth.is_none() && common.config.is_none() {
        common.synth = Some("default".into());
    }
    let out = common.out.take().ok_or_else(|| usage("--out <file.csv> is required"))?;
    let cfg = build_config(&common)?;
    if !matches!(cfg.source, DataSource::Synth { .. }) {
        return Err(usage("synth needs a synthetic scenario"));
    }
    let loaded = experiment::load_source(&cfg.source, cfg.sentinel, cfg.seed)?;
    data::write_csv_file(&loaded.dataset, &out)?;
    println!("wrote {} records to {}", loaded.dataset.len(), out.display());
    Ok(())
}

fn cmd_ingest_check(args: &CommonArgs) -> Result<()> {
    let path = args.dataset.as_ref().ok_or_else(|| usage("--dataset is required"))?;
    if !path.is_file() {
        return Err(usage(format!("dataset {} not found", path.display())));
    }
    let mut schema = match &args.schema {
        Some(p) => Schema::load(p).map_err(|e| usage(e.to_string()))?,
        None => Schema::canonical(),
    };
    if let Some(s) = args.sentinel {
        schema.sentinel = s;
    }
    let ingested = data::ingest(path, &schema)?;
    let filtered = ingested.dataset.filter_min_gateways(args.min_rx.unwrap_or(3));
    let r = &ingested.report;
    print_json(&json!({
        "rows_read": r.rows_read,
        "accepted": r.accepted,
        "rejected": r.rejected.len(),
        "first_rejections": r.rejected.iter().take(20).collect::<Vec<_>>(),
        "gateways": ingested.dataset.gateway_count(),
        "after_filter": filtered.len(),
        "dropped_by_filter": ingested.dataset.len() - filtered.len(),
        "content_hash": filtered.content_hash(),
    }))
}

fn cmd_split(args: &CommonArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let prep = experiment::prepare(&cfg)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| prep.dataset.records()[i].id).collect::<Vec<_>>();
    let s = &prep.split;
    let body = json!({
        "seed": cfg.seed,
        "fraction_m2": cfg.fraction_m2,
        "records": prep.dataset.len(),
        "train_m1": ids(&s.train_m1),
        "train_m2": ids(&s.train_m2),
        "validation": ids(&s.validation),
        "test": ids(&s.test),
    });
    let path = cfg.out.join("split.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &body)?;
    w.flush()?;
    println!(
        "train_m1 {} / train_m2 {} / validation {} / test {} -> {}",
        s.train_m1.len(),
        s.train_m2.len(),
        s.validation.len(),
        s.test.len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let prep = experiment::prepare(&cfg)?;
    let models = pipeline::train_models(&prep.dataset, &prep.split, &cfg.forest, cfg.seed)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    models.m1.forest.save(&cfg.out.join("m1.json"))?;
    models.m2.forest.save(&cfg.out.join("m2.json"))?;
    let mut w = create(&cfg.out.join("split.json"))?;
    serde_json::to_writer_pretty(&mut w, &prep.split)?;
    w.flush()?;
    println!("saved m1.json, m2.json and split.json to {}", cfg.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let prep = experiment::prepare(&cfg)?;
    let text = fs::read_to_string(args.models.join("split.json")).context("reading split.json")?;
    let split: data::DatasetSplit = serde_json::from_str(&text).context("parsing split.json")?;
    if split.n_records != prep.dataset.len() {
        bail!(
            "models were trained on {} records, dataset has {} after filtering",
            split.n_records,
            prep.dataset.len()
        );
    }
    let m1 = PositionModel {
        forest: ForestModel::load(&args.models.join("m1.json"))?,
        trained_on: split.train_m1.clone(),
    };
    let m2 = AccuracyModel {
        forest: ForestModel::load(&args.models.join("m2.json"))?,
        trained_on: split.train_m2.clone(),
    };
    let indices = match args.set {
        SetArg::Validation => &split.validation,
        SetArg::Test => &split.test,
    };
    let eval = pipeline::evaluate(&m1, &m2, &prep.dataset, indices)?;
    let path = cfg.out.join(experiment::ESTIMATES_FILE);
    let mut w = create(&path)?;
    pipeline::write_estimates(&eval.records, &mut w)?;
    w.flush()?;
    print_json(&eval.summary)
}

fn cmd_sweep(args: &CommonArgs) -> Result<()> {
    let mut cfg = build_config(args)?;
    let grid = cfg.sweep.take().unwrap_or_else(pipeline::default_sweep_grid);
    let prep = experiment::prepare(&cfg)?;
    let rows = pipeline::repartition_sweep(&prep.dataset, &prep.holdout, &grid, &cfg.forest, cfg.seed)?;
    let path = cfg.out.join(experiment::SWEEP_FILE);
    let mut w = create(&path)?;
    pipeline::write_sweep(&rows, &mut w)?;
    w.flush()?;
    println!("{} sweep rows -> {}", rows.len(), path.display());
    Ok(())
}

fn read_estimates(path: &Path) -> Result<Vec<pipeline::EstimateRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(pipeline::read_estimates(f)?)
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let records = read_estimates(&args.estimates)?;
    let portions = match &args.portions {
        Some(s) => parse_list(s)?,
        None => pipeline::default_portions(),
    };
    let curve = pipeline::selection_curve(&records, &portions)?;
    let path = args.out.join(experiment::SELECTION_FILE);
    let mut w = create(&path)?;
    pipeline::write_selection(&curve, &mut w)?;
    w.flush()?;
    println!("{} portions -> {}", curve.rows.len(), path.display());

    let strategy = match (args.percentile, args.threshold) {
        (Some(p), _) => Some(ThresholdStrategy::Percentile(p)),
        (None, Some(t)) => Some(ThresholdStrategy::Hard(t)),
        (None, None) => None,
    };
    if let Some(strategy) = strategy {
        let thr = pipeline::dae_threshold(&records, strategy)?;
        let targets = match &args.apply_to {
            Some(p) => read_estimates(p)?,
            None => records,
        };
        let kept = pipeline::select_below(&targets, thr);
        let path = args.out.join("selected.csv");
        let mut w = create(&path)?;
        pipeline::write_estimates(&kept, &mut w)?;
        w.flush()?;
        println!(
            "dae threshold {thr:.3} m kept {} of {} -> {}",
            kept.len(),
            targets.len(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let prep = experiment::prepare(&cfg)?;
    let truths: Vec<_> = prep.dataset.records().iter().map(|r| r.truth).collect();
    let assignment = spatial::kmeans(&truths, cfg.k, seed::derive(cfg.seed, "kmeans"))?;
    let path = cfg.out.join(experiment::CENTERS_FILE);
    let mut w = create(&path)?;
    spatial::write_centers_csv(&assignment, &mut w)?;
    w.flush()?;
    println!(
        "{} centers, inertia {:.3e} m^2 -> {}",
        assignment.k,
        assignment.inertia,
        path.display()
    );
    if let Some(est) = &args.estimates {
        let records = read_estimates(est)?;
        let report = spatial::cluster_report(&assignment, &records, seed::derive(cfg.seed, "pairwise"))?;
        let path = cfg.out.join(experiment::CLUSTERS_FILE);
        let mut w = create(&path)?;
        spatial::write_cluster_csv(&report, &mut w)?;
        w.flush()?;
        print_json(&report.correlations)?;
    }
    Ok(())
}

/// CSV as `{column: [values...]}` with numeric cells as numbers.
fn csv_columns(path: &Path) -> Result<Value> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut cols: BTreeMap<&str, Vec<Value>> = headers.iter().map(|h| (h.as_str(), Vec::new())).collect();
    for row in rdr.records() {
        let row = row?;
        for (h, cell) in headers.iter().zip(row.iter()) {
            let v = match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => json!(x),
                _ if cell.is_empty() => Value::Null,
                _ => json!(cell),
            };
            cols.get_mut(h.as_str()).expect("known header").push(v);
        }
    }
    Ok(json!(cols))
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let read_json = |name: &str| -> Result<Value> {
        let p = args.dir.join(name);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_str(&text)?)
    };
    let mut bundle = serde_json::Map::new();
    bundle.insert("summary".into(), read_json(experiment::SUMMARY_FILE)?);
    bundle.insert("manifest".into(), read_json(experiment::MANIFEST_FILE)?);
    for (key, file) in [
        ("sweep", experiment::SWEEP_FILE),
        ("selection", experiment::SELECTION_FILE),
        ("clusters", experiment::CLUSTERS_FILE),
        ("centers", experiment::CENTERS_FILE),
    ] {
        let p = args.dir.join(file);
        if p.is_file() {
            bundle.insert(key.into(), csv_columns(&p)?);
        }
    }
    let corr = args.dir.join(experiment::CORRELATIONS_FILE);
    if corr.is_file() {
        bundle.insert("correlations".into(), read_json(experiment::CORRELATIONS_FILE)?);
    }
    let out = args.out.clone().unwrap_or_else(|| args.dir.join("report.json"));
    let mut w = create(&out)?;
    serde_json::to_writer_pretty(&mut w, &Value::Object(bundle))?;
    writeln!(w)?;
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
        Command::IngestCheck(a) => cmd_ingest_check(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Select(a) => cmd_select(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<dae_core::Error>(), Some(dae_core::Error::Config(_)));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
