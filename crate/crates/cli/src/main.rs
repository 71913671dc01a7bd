//! `busarrival` command-line tool.
//!
//! Exit codes: 0 success, 1 outputs written but anomalies were reported,
//! 2 fatal input or configuration error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use busarrival::avl_ingest::{
    ingest, read_traversals_csv, write_diagnostics_csv, write_traversals_csv, SectionTraversal,
};
use busarrival::boosted_trees::{load_model, save_model, BoostedForest};
use busarrival::calibration::CalibrationReport;
use busarrival::clock;
use busarrival::hybrid_estimator::{predict_downstream, write_predictions_csv, PrecedingTripStore};
use busarrival::pipeline::{self, PipelineConfig};
use busarrival::replay_eval::emit_report;
use busarrival::route_model::{reference_route, Route};
use busarrival::synthetic::{generate_log, SyntheticConfig};

#[derive(Parser, Debug)]
#[command(name = "busarrival", version, about = "Bus arrival time estimation from AVL logs")]
struct Cli {
    /// TOML pipeline config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Route TOML; defaults to the bundled reference route.
    #[arg(long, global = true)]
    route: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn raw AVL logs into a section traversal table.
    Ingest(IngestArgs),
    /// Fit the boosted-trees forest on the training split.
    Train(TrainArgs),
    /// Compute hybrid weights and standard dwell times.
    Calibrate(CalibrateArgs),
    /// Predict arrival times for the remaining sections of a trip.
    Predict(PredictArgs),
    /// Replay the test split in time order and write evaluation reports.
    Replay(ReplayArgs),
    /// Generate a synthetic raw AVL log for the route.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw AVL CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Traversal CSV to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Diagnostics CSV; defaults to <out>.diagnostics.csv.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Stop geofence radius in metres.
    #[arg(long)]
    geofence_radius_m: Option<f64>,
    /// Longest fix gap, in seconds, that keeps a stream unbroken.
    #[arg(long)]
    max_gap_s: Option<f64>,
    /// Fixes implying a faster jump are dropped.
    #[arg(long)]
    max_speed_kmh: Option<f64>,
    /// Speeds below this count as stationary for dwell.
    #[arg(long)]
    stationary_speed_kmh: Option<f64>,
    /// Fixes farther than this outside the stop bounding box are dropped.
    #[arg(long)]
    bbox_padding_m: Option<f64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Fraction of trips in the training split.
    #[arg(long)]
    train_ratio: Option<f64>,
    /// Fraction of trips in the calibration split.
    #[arg(long)]
    calibration_ratio: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Traversal CSV.
    traversals: PathBuf,
    /// Model artifact to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Per-round training MSE log; defaults to <out>.training.csv.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// Column-sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trees.
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Shrinkage applied to each tree.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Maximum tree depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Fraction of features sampled per tree.
    #[arg(long)]
    colsample_bytree: Option<f64>,
    /// L1 penalty on leaf weights.
    #[arg(long)]
    alpha: Option<f64>,
    /// L2 penalty on leaf weights.
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum hessian sum in each child.
    #[arg(long)]
    min_child_weight: Option<f64>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Traversal CSV.
    traversals: PathBuf,
    /// Model artifact.
    #[arg(short, long)]
    model: PathBuf,
    /// Calibration report to write.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Probe window in minutes.
    #[arg(long)]
    window_minutes: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model artifact.
    #[arg(short, long)]
    model: PathBuf,
    /// Calibration report.
    #[arg(long)]
    report: PathBuf,
    /// Traversal CSV of trips already observed.
    #[arg(long)]
    store: PathBuf,
    /// Prediction instant: a full timestamp, or HH:MM:SS on --date.
    #[arg(long)]
    at: String,
    /// Date for a time-only --at; defaults to the date of the latest stored trip.
    #[arg(long)]
    date: Option<NaiveDate>,
    /// First section to predict.
    #[arg(long)]
    from_section: u32,
    /// Prediction CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Probe window in minutes.
    #[arg(long)]
    window_minutes: Option<f64>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Traversal CSV.
    traversals: PathBuf,
    /// Model artifact.
    #[arg(short, long)]
    model: PathBuf,
    /// Calibration report.
    #[arg(long)]
    report: PathBuf,
    /// Directory for sections.csv, trips.csv and summary.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Probe window in minutes.
    #[arg(long)]
    window_minutes: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Raw AVL CSV to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of service days.
    #[arg(long)]
    days: Option<u32>,
    /// Up trips per day.
    #[arg(long)]
    trips_per_day: Option<u32>,
}

/// Command outcome when nothing fatal happened.
enum Outcome {
    Clean,
    Anomalies(usize),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Anomalies(n)) => {
            warn!("{n} anomalies reported");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(route) = cli.route {
        config.route = Some(route);
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, config),
        Command::Train(a) => cmd_train(a, config),
        Command::Calibrate(a) => cmd_calibrate(a, config),
        Command::Predict(a) => cmd_predict(a, config),
        Command::Replay(a) => cmd_replay(a, config),
        Command::Synth(a) => cmd_synth(a, config),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut config: PipelineConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    // A relative route path is relative to the config file.
    if let (Some(route), Some(dir)) = (&config.route, path.parent()) {
        if route.is_relative() {
            config.route = Some(dir.join(route));
        }
    }
    Ok(config)
}

fn load_route(config: &PipelineConfig) -> Result<Route> {
    match &config.route {
        Some(path) => Route::from_path(path).with_context(|| format!("loading route {}", path.display())),
        None => Ok(reference_route()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_split(config: &mut PipelineConfig, split: SplitArgs) {
    set(&mut config.split.train, split.train_ratio);
    set(&mut config.split.calibration, split.calibration_ratio);
}

fn validated(config: PipelineConfig) -> Result<PipelineConfig> {
    config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(config)
}

fn read_traversals(path: &Path) -> Result<Vec<SectionTraversal>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_traversals_csv(io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_model(path: &Path) -> Result<BoostedForest> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("loading model {}", path.display()))
}

fn read_report(path: &Path) -> Result<CalibrationReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    CalibrationReport::from_json(&text).with_context(|| format!("loading report {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// `base` with `suffix` appended to its file stem, e.g. `model.json` to
/// `model.training.csv`.
fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    base.with_file_name(format!("{stem}.{suffix}"))
}

fn outcome(anomalies: usize) -> Outcome {
    if anomalies == 0 {
        Outcome::Clean
    } else {
        Outcome::Anomalies(anomalies)
    }
}

fn cmd_ingest(a: IngestArgs, mut config: PipelineConfig) -> Result<Outcome> {
    set(&mut config.ingest.geofence_radius_m, a.geofence_radius_m);
    set(&mut config.ingest.max_gap_s, a.max_gap_s);
    set(&mut config.ingest.clean.max_speed_kmh, a.max_speed_kmh);
    set(&mut config.ingest.stationary_speed_kmh, a.stationary_speed_kmh);
    set(&mut config.ingest.clean.bbox_padding_m, a.bbox_padding_m);
    let route = load_route(&config)?;

    let mut logs = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        logs.push(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let out = ingest(logs.iter().map(String::as_str), &route, &config.ingest)?;
    info!("{:?}", out.stats);

    let mut w = create(&a.out)?;
    write_traversals_csv(&out.traversals, &mut w)?;
    w.flush()?;
    let diag_path = a.diagnostics.unwrap_or_else(|| sibling(&a.out, "diagnostics.csv"));
    let mut w = create(&diag_path)?;
    write_diagnostics_csv(&out.diagnostics, &mut w)?;
    w.flush()?;
    Ok(outcome(out.diagnostics.len()))
}

fn cmd_train(a: TrainArgs, mut config: PipelineConfig) -> Result<Outcome> {
    apply_split(&mut config, a.split);
    let t = &mut config.train;
    set(&mut t.rng_seed, a.seed);
    set(&mut t.n_estimators, a.n_estimators);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.max_depth, a.max_depth);
    set(&mut t.colsample_bytree, a.colsample_bytree);
    set(&mut t.alpha, a.alpha);
    set(&mut t.lambda, a.lambda);
    set(&mut t.min_child_weight, a.min_child_weight);
    let config = validated(config)?;

    let traversals = read_traversals(&a.traversals)?;
    let fit = pipeline::train(&traversals, &config).context("training")?;
    fs::write(&a.out, save_model(&fit.forest)).with_context(|| format!("writing {}", a.out.display()))?;

    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, "training.csv"));
    let mut w = create(&log_path)?;
    writeln!(w, "round,training_mse")?;
    for (round, mse) in fit.training_mse.iter().enumerate() {
        writeln!(w, "{round},{mse}")?;
    }
    w.flush()?;
    info!(
        "trained {} trees, final training MSE {}",
        fit.forest.trees.len(),
        fit.training_mse.last().copied().unwrap_or(f64::NAN)
    );
    Ok(Outcome::Clean)
}

fn cmd_calibrate(a: CalibrateArgs, mut config: PipelineConfig) -> Result<Outcome> {
    apply_split(&mut config, a.split);
    set(&mut config.window_minutes, a.window_minutes);
    let config = validated(config)?;
    let route = load_route(&config)?;
    let forest = read_model(&a.model)?;
    let traversals = read_traversals(&a.traversals)?;
    let splits = pipeline::split(&traversals, &config);
    if splits.calibration.is_empty() {
        bail!("calibration split is empty");
    }

    let report = pipeline::calibrate_all(&traversals, &forest, &route, &config);
    fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    for d in &report.diagnostics {
        warn!("{d}");
    }
    Ok(outcome(report.diagnostics.len()))
}

fn parse_instant(at: &str, date: Option<NaiveDate>, store: &[SectionTraversal]) -> Result<NaiveDateTime> {
    if let Some(t) = clock::parse_iso(at)
        .or_else(|| NaiveDateTime::parse_from_str(at, "%Y-%m-%d %H:%M:%S%.f").ok())
        .or_else(|| clock::parse_avl(at))
    {
        return Ok(t);
    }
    let time = NaiveTime::parse_from_str(at, "%H:%M:%S%.f")
        .or_else(|_| NaiveTime::parse_from_str(at, "%H:%M"))
        .map_err(|_| anyhow!("unrecognised --at value {at:?}"))?;
    let date = date
        .or_else(|| store.iter().map(|t| t.section_start_time).max().map(|t| t.date()))
        .ok_or_else(|| anyhow!("--at {at:?} has no date; pass --date or a non-empty store"))?;
    Ok(date.and_time(time))
}

fn cmd_predict(a: PredictArgs, mut config: PipelineConfig) -> Result<Outcome> {
    set(&mut config.window_minutes, a.window_minutes);
    let config = validated(config)?;
    let route = load_route(&config)?;
    let forest = read_model(&a.model)?;
    let report = read_report(&a.report)?;
    let traversals = read_traversals(&a.store)?;
    let at = parse_instant(&a.at, a.date, &traversals)?;

    let route = report.apply_to(&route);
    let weights = report.weights();
    let store = PrecedingTripStore::from_traversals(config.window_s(), &traversals);
    let records = predict_downstream(&route, a.from_section, at, &forest, &weights, &store)?;

    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_predictions_csv(&records, &mut w)?;
            w.flush()?;
        }
        None => write_predictions_csv(&records, io::stdout().lock())?,
    }
    Ok(outcome(records.iter().filter(|r| r.diagnostic.is_some()).count()))
}

fn cmd_replay(a: ReplayArgs, mut config: PipelineConfig) -> Result<Outcome> {
    apply_split(&mut config, a.split);
    set(&mut config.window_minutes, a.window_minutes);
    let config = validated(config)?;
    let route = load_route(&config)?;
    let forest = read_model(&a.model)?;
    let report = read_report(&a.report)?;
    let traversals = read_traversals(&a.traversals)?;

    let result = pipeline::replay_test(&traversals, &forest, &report, &route, &config);
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    emit_report(&result, &a.out_dir).with_context(|| format!("writing reports to {}", a.out_dir.display()))?;
    for d in &result.diagnostics {
        warn!("{d}");
    }
    Ok(outcome(result.diagnostics.len()))
}

fn cmd_synth(a: SynthArgs, config: PipelineConfig) -> Result<Outcome> {
    let route = load_route(&config)?;
    let mut cfg = SyntheticConfig::default();
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.days, a.days);
    set(&mut cfg.trips_per_day, a.trips_per_day);
    let log = generate_log(&route, &cfg);
    let mut w = create(&a.out)?;
    log.write_csv(&mut w)?;
    w.flush()?;
    info!("{} fixes, {} trips", log.points.len(), log.trips.len());
    Ok(Outcome::Clean)
}
