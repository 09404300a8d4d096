//! `risenet`: generate synthetic worlds, ingest record files, run the
//! exploratory analysis, and train, evaluate, ablate or sweep models.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use risenet::analytics::observation_suite;
use risenet::data::{ingest, DataConfig, Dataset, DatasetManifest, IngestPaths, IngestReport, RecordStore, Sample};
use risenet::model::ModelParams;
use risenet::synthgen::generate;
use risenet::training::{self, Metrics, SweepParam};
use serde::{Deserialize, Serialize};

use config::{Overrides, RunConfig};

/// Default output root when `--out` is absent.
const OUT_ENV: &str = "RISENET_OUT";
const MANIFEST: &str = "manifest.toml";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingInput(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

#[derive(Parser)]
#[command(name = "risenet", version, about = "Rising-star prediction over diffusion graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for both generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; defaults to $RISENET_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config field, e.g. `--set model.layers=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory with the three record files.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run directory produced by `ingest`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write its record files.
    Gen(Common),
    /// Validate record files and write a dataset manifest.
    Ingest(Common),
    /// Write the exploratory tables for an ingested dataset.
    Analyze(Common),
    /// Train one model and record its history, checkpoint and metrics.
    Train(Common),
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Decision threshold; predictions above it are positive.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Train the full model and every ablation variant.
    Ablate(Common),
    /// Retrain over a range of time steps or GNN layers.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `1,2,3,4,5,6`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

/// The part of an ingest manifest needed to rebuild the dataset.
#[derive(Debug, Serialize, Deserialize)]
struct Source {
    input: PathBuf,
    data: DataConfig,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    input: &'a Path,
    data: &'a DataConfig,
    report: &'a IngestReport,
    dataset: &'a DatasetManifest,
}

#[derive(Serialize)]
struct TrainSummary {
    threshold: f64,
    best_epoch: usize,
    val: Metrics,
    test: Metrics,
}

fn overrides(c: &Common, checkpoint: Option<&PathBuf>) -> Overrides {
    Overrides {
        seed: c.seed,
        input: c.input.clone(),
        dataset: c.dataset.clone(),
        checkpoint: checkpoint.cloned(),
        set: c.set.clone(),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(v: &T) -> String {
    toml::to_string_pretty(v).expect("serializable output")
}

/// Creates `<root>/<timestamp>-seed<seed>`, suffixing `-N` when taken.
fn run_dir(out: Option<&Path>, seed: u64) -> Result<PathBuf, CliError> {
    let root = out
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&root).map_err(|e| CliError::Other(format!("{}: {e}", root.display())))?;
    let stem = format!("{}-seed{seed}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"));
    for n in 0.. {
        let dir = if n == 0 {
            root.join(&stem)
        } else {
            root.join(format!("{stem}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Other(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

/// Opens a fresh run directory and echoes the effective config into it.
fn start(cfg: &RunConfig, common: &Common, seed: u64) -> Result<PathBuf, CliError> {
    let dir = run_dir(common.out.as_deref(), seed)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    Ok(dir)
}

fn read_store(input: &Path, data: &DataConfig) -> Result<(RecordStore, IngestReport), CliError> {
    let paths = IngestPaths::in_dir(input);
    let missing = paths.missing();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::MissingInput(list.join(", ")));
    }
    ingest(&paths, data.span()).map_err(other)
}

/// Rebuilds the dataset named by `paths.dataset` and adopts its data config.
fn load_dataset(cfg: &mut RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg
        .paths
        .dataset
        .clone()
        .ok_or_else(|| CliError::MissingInput("no dataset; run `ingest` and pass --dataset".into()))?;
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    cfg.paths.dataset = Some(fs::canonicalize(&dir).map_err(other)?);
    let source: Source = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let (store, _) = read_store(&source.input, &source.data)?;
    let ds = Dataset::build(&store, &source.data).map_err(other)?;
    cfg.paths.input = Some(source.input);
    cfg.data = source.data;
    for w in &ds.warnings {
        log::warn!("{w}");
    }
    Ok(ds)
}

fn samples(ds: &Dataset, split: SplitName) -> &[Sample] {
    match split {
        SplitName::Train => &ds.train,
        SplitName::Val => &ds.val,
        SplitName::Test => &ds.test,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(c) => {
            let cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let world = generate(&cfg.gen).map_err(other)?;
            let dir = start(&cfg, &c, cfg.gen.seed)?;
            world.write(&dir).map_err(other)?;
            println!("{}", dir.display());
        }
        Command::Ingest(c) => {
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let input = cfg
                .paths
                .input
                .clone()
                .ok_or_else(|| CliError::MissingInput("no input directory; pass --input".into()))?;
            let (store, report) = read_store(&input, &cfg.data)?;
            let ds = Dataset::build(&store, &cfg.data).map_err(other)?;
            let input = fs::canonicalize(&input).map_err(other)?;
            cfg.paths.input = Some(input.clone());
            let dir = start(&cfg, &c, cfg.train.seed)?;
            let manifest = ds.manifest();
            let file = ManifestFile {
                input: &input,
                data: &cfg.data,
                report: &report,
                dataset: &manifest,
            };
            write(&dir.join(MANIFEST), &to_toml(&file))?;
            println!("{}", dir.display());
        }
        Command::Analyze(c) => {
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let ds = load_dataset(&mut cfg)?;
            let report = observation_suite(&ds, &ds.ever_positive()).map_err(other)?;
            let dir = start(&cfg, &c, cfg.train.seed)?;
            report.write(&dir).map_err(other)?;
            print!("{}", report.summary());
            println!("{}", dir.display());
        }
        Command::Train(c) => {
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let ds = load_dataset(&mut cfg)?;
            let outcome = training::train(&ds, &cfg.model, &cfg.train).map_err(other)?;
            let test = training::evaluate(&outcome.params, &ds, &ds.test, outcome.threshold).map_err(other)?;
            let dir = start(&cfg, &c, cfg.train.seed)?;
            training::write_history(&dir.join("history.csv"), &outcome.history).map_err(other)?;
            outcome.params.save(&dir.join("checkpoint.json")).map_err(other)?;
            let summary = TrainSummary {
                threshold: outcome.threshold,
                best_epoch: outcome.best_epoch,
                val: outcome.val,
                test,
            };
            write(&dir.join("metrics.toml"), &to_toml(&summary))?;
            println!(
                "test precision {:.4} recall {:.4} f1 {:.4} at threshold {}",
                test.precision, test.recall, test.f1, outcome.threshold
            );
            println!("{}", dir.display());
        }
        Command::Eval {
            common: c,
            checkpoint,
            threshold,
            split,
        } => {
            if !(0.0..1.0).contains(&threshold) {
                return Err(CliError::Config(format!(
                    "--threshold must lie in [0, 1), got {threshold}"
                )));
            }
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, checkpoint.as_ref()))?;
            let path = cfg
                .paths
                .checkpoint
                .clone()
                .ok_or_else(|| CliError::MissingInput("no checkpoint; pass --checkpoint".into()))?;
            if !path.exists() {
                return Err(CliError::MissingInput(path.display().to_string()));
            }
            let params = ModelParams::load_file(&path).map_err(other)?;
            let ds = load_dataset(&mut cfg)?;
            cfg.model = params.config.clone();
            let m = training::evaluate(&params, &ds, samples(&ds, split), threshold).map_err(other)?;
            let dir = start(&cfg, &c, cfg.train.seed)?;
            write(&dir.join("metrics.toml"), &to_toml(&m))?;
            println!("precision {:.4} recall {:.4} f1 {:.4}", m.precision, m.recall, m.f1);
            println!("{}", dir.display());
        }
        Command::Ablate(c) => {
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let ds = load_dataset(&mut cfg)?;
            let rows = training::ablation_matrix(&ds, &cfg.model, &cfg.train).map_err(other)?;
            let dir = start(&cfg, &c, cfg.train.seed)?;
            training::write_results(&dir.join("results.csv"), &rows).map_err(other)?;
            for r in &rows {
                println!(
                    "{:>5} precision {:.4} recall {:.4} f1 {:.4}",
                    r.label, r.test.precision, r.test.recall, r.test.f1
                );
            }
            println!("{}", dir.display());
        }
        Command::Sweep {
            common: c,
            param,
            values,
        } => {
            let p = SweepParam::parse(&param)
                .ok_or_else(|| CliError::Config(format!("--param must be time_steps or layers, got `{param}`")))?;
            if values.contains(&0) {
                return Err(CliError::Config("--values must be positive".into()));
            }
            let mut cfg = config::load(c.config.as_deref(), &overrides(&c, None))?;
            let ds = load_dataset(&mut cfg)?;
            let rows = training::sweep(&ds, &cfg.model, &cfg.train, p, &values).map_err(other)?;
            let dir = start(&cfg, &c, cfg.train.seed)?;
            training::write_results(&dir.join(format!("sweep_{}.csv", p.name())), &rows).map_err(other)?;
            for r in &rows {
                println!("{}={} f1 {:.4}", p.name(), r.label, r.test.f1);
            }
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
