//! Experiment runner for `lpsphere`.
//!
//! Each run reads an [`ExperimentConfig`], dispatches to one pipeline and
//! writes `manifest.json` plus one or more CSV tables into `out_dir`.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lpsphere::rare_event::SphereMeasure;
use lpsphere::PExponent;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{run_experiment, Outcome, Table};

/// JSON schema every manifest conforms to.
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");
pub const MANIFEST_NAME: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_UNRELIABLE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(lpsphere::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<lpsphere::Error> for CliError {
    fn from(e: lpsphere::Error) -> Self {
        match e {
            lpsphere::Error::InvalidArgument(m) => CliError::Config(m),
            lpsphere::Error::InfiniteExponent(what) => {
                CliError::Config(format!("p = inf is not supported for {what}"))
            }
            other => CliError::Numeric(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Io(_) => EXIT_NUMERIC,
        }
    }
}

/// What a completed run wrote.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest_path: PathBuf,
    pub manifest: Value,
    pub tables: Vec<PathBuf>,
    pub unreliable: Option<String>,
}

impl RunResult {
    pub fn exit_code(&self) -> i32 {
        if self.unreliable.is_some() {
            EXIT_UNRELIABLE
        } else {
            EXIT_OK
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the config with `out_dir` removed, over sorted-key JSON.
pub fn input_hash(config: &ExperimentConfig) -> String {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Value::Object(map) = &mut v {
        map.remove("out_dir");
    }
    sha256_hex(v.to_string().as_bytes())
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(target)
}

/// Validates the config, runs it and writes all artifacts.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, CliError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| {
        CliError::Config(format!("out_dir {} is not writable: {e}", config.out_dir.display()))
    })?;
    let start = Instant::now();
    let outcome = run_experiment(config)?;
    let wall_time = start.elapsed().as_secs_f64();
    let mut outputs = serde_json::Map::new();
    let mut tables = Vec::new();
    for t in &outcome.tables {
        tables.push(write_atomic(&config.out_dir, &t.name, t.body.as_bytes())?);
        outputs.insert(t.name.clone(), json!(sha256_hex(t.body.as_bytes())));
    }
    let manifest = json!({
        "config": serde_json::to_value(config).expect("config serializes"),
        "experiment": config.experiment.name(),
        "input_hash": input_hash(config),
        "metrics": outcome.metrics,
        "outputs": outputs,
        "status": if outcome.unreliable.is_some() { "unreliable" } else { "ok" },
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall_time,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let manifest_path = write_atomic(&config.out_dir, MANIFEST_NAME, text.as_bytes())?;
    Ok(RunResult {
        manifest_path,
        manifest,
        tables,
        unreliable: outcome.unreliable,
    })
}

#[derive(Debug, Parser)]
#[command(name = "lpsphere", version, about = "Large-deviation experiments on l^p spheres")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat TOML config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cone or surface samples and their first-coordinate fit.
    Sample(Overrides),
    /// Poincaré–Maxwell–Borel marginals versus n.
    Pbm(Overrides),
    /// Importance-sampled probabilities of m_q(L) <= beta + epsilon and the fitted rate.
    RateCurve(Overrides),
    /// Conditional chain for m_q(L) <= beta + epsilon.
    Gibbs(Overrides),
    /// Constrained maximum-entropy solution and its beta sweep.
    Maxent(Overrides),
    /// Surface importance-weight and moment bounds.
    SurfaceCheck(Overrides),
}

#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long)]
    p: Option<PExponent>,
    #[arg(long)]
    q: Option<PExponent>,
    /// Comma-separated dimensions.
    #[arg(long = "n", value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_measure)]
    measure: Option<SphereMeasure>,
}

fn parse_measure(s: &str) -> Result<SphereMeasure, String> {
    match s {
        "cone" => Ok(SphereMeasure::Cone),
        "surface" => Ok(SphereMeasure::Surface),
        _ => Err(format!("expected cone or surface, got {s:?}")),
    }
}

fn resolve(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let (experiment, over) = match cli.command {
        Some(Command::Sample(o)) => (Some(Experiment::Sample), o),
        Some(Command::Pbm(o)) => (Some(Experiment::Pbm), o),
        Some(Command::RateCurve(o)) => (Some(Experiment::RateCurve), o),
        Some(Command::Gibbs(o)) => (Some(Experiment::Gibbs), o),
        Some(Command::Maxent(o)) => (Some(Experiment::Maxent), o),
        Some(Command::SurfaceCheck(o)) => (Some(Experiment::SurfaceCheck), o),
        None => (None, Overrides::default()),
    };
    let mut config = match (&cli.config, experiment) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        (None, Some(e)) => ExperimentConfig::new(e),
        (None, None) => return Err(CliError::Config("give a subcommand or --config".into())),
    };
    if let Some(e) = experiment {
        config.experiment = e;
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    if let Some(v) = cli.out {
        config.out_dir = v;
    }
    if let Some(v) = over.p {
        config.p = v;
    }
    if let Some(v) = over.q {
        config.q = v;
    }
    if let Some(v) = over.n_list {
        config.n_list = v;
    }
    if let Some(v) = over.beta {
        config.beta = v;
    }
    if let Some(v) = over.epsilon {
        config.epsilon = Some(v);
    }
    if let Some(v) = over.budget {
        config.budget = v;
    }
    if let Some(v) = over.k {
        config.k = v;
    }
    if let Some(v) = over.measure {
        config.measure = v;
    }
    Ok(config)
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("configuration error: --threads must be positive");
            return EXIT_CONFIG;
        }
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let config = match resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match run(&config) {
        Ok(result) => {
            println!("{}", result.manifest_path.display());
            if let Some(why) = &result.unreliable {
                eprintln!("unreliable estimate: {why}");
            }
            result.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
