//! `molcomm`: batch experiments for the diffusive molecular communication
//! workbench.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use molcomm::config::load_config;
use molcomm::experiments::{run_experiment, DetectorKind, ExperimentId, ExperimentSpec, RunOptions};
use molcomm::Execution;

const VERSION: &str = env!("MOLCOMM_VERSION");

#[derive(Debug, Parser)]
#[command(name = "molcomm", version = VERSION, about = "Diffusive molecular communication experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment configuration (TOML, or JSON by extension). Without it the
    /// built-in configuration of the experiment is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory [default: results/<experiment>]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed, replacing simulation.master_seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Multiplier on the configured realization count
    #[arg(long, global = true, value_name = "F", default_value_t = 1.0)]
    scale: f64,

    /// Detectors to evaluate (repeat or separate with commas)
    #[arg(long, global = true, value_enum, value_delimiter = ',', default_values = ["ml", "matched", "equal"])]
    detector: Vec<DetectorArg>,

    /// Explicit memory F of the sequence detector
    #[arg(long, global = true, value_name = "F")]
    memory: Option<usize>,

    /// Number of samples per bit interval M (a single value)
    #[arg(long, global = true, value_name = "M")]
    samples: Option<usize>,

    /// CSV file of weights for the custom detector (one value per sample)
    #[arg(long, global = true, value_name = "PATH")]
    weights: Option<PathBuf>,

    /// Also dump the raw counts of the first N realizations
    #[arg(long, global = true, value_name = "N")]
    trace: Option<u64>,

    /// Run realizations on the calling thread only
    #[arg(long, global = true)]
    sequential: bool,

    /// More log output (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expected and simulated impulse response
    Impulse,
    /// Mutual information between two observations versus their spacing
    Mi,
    /// Bit error probability versus samples per interval
    Ber {
        #[arg(long, value_enum)]
        experiment: BerExperiment,
    },
    /// Check a configuration file and print it with defaults applied
    Validate {
        /// Configuration to check (alternatively --config)
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BerExperiment {
    Isifree,
    Isi,
    Distance,
    Enzyme,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    Ml,
    Matched,
    Equal,
    Custom,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Ml => DetectorKind::Ml,
            DetectorArg::Matched => DetectorKind::Matched,
            DetectorArg::Equal => DetectorKind::Equal,
            DetectorArg::Custom => DetectorKind::Custom,
        }
    }
}

impl From<BerExperiment> for ExperimentId {
    fn from(e: BerExperiment) -> Self {
        match e {
            BerExperiment::Isifree => ExperimentId::BerIsifree,
            BerExperiment::Isi => ExperimentId::BerIsi,
            BerExperiment::Distance => ExperimentId::BerDistance,
            BerExperiment::Enzyme => ExperimentId::BerEnzyme,
            BerExperiment::Flow => ExperimentId::BerFlow,
        }
    }
}

/// Reads weights from a CSV file: every numeric cell, row by row. A first
/// row that does not parse is taken as a header.
fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read weights from {}", path.display()))?;
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().filter(|c| !c.is_empty()).map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => weights.extend(values),
            Err(_) if row == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", path.display(), row + 1),
        }
    }
    if weights.is_empty() {
        bail!("{}: no weights found", path.display());
    }
    Ok(weights)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
}

fn options(g: &Global) -> Result<RunOptions> {
    let mut detectors: Vec<DetectorKind> = g.detector.iter().map(|&d| d.into()).collect();
    detectors.sort();
    detectors.dedup();
    let custom_weights = match &g.weights {
        Some(p) => Some(read_weights(p)?),
        None => None,
    };
    if custom_weights.is_some() && !detectors.contains(&DetectorKind::Custom) {
        detectors.push(DetectorKind::Custom);
    }
    let execution = if g.sequential { Execution::Sequential } else { Execution::Parallel };
    Ok(RunOptions {
        seed: g.seed,
        scale: g.scale,
        detectors,
        custom_weights,
        memory: g.memory,
        samples: g.samples,
        trace: g.trace,
        execution,
    })
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let id = match cli.command {
        Command::Validate { path } => {
            let Some(path) = path.or_else(|| g.config.clone()) else {
                bail!("validate needs a configuration path (argument or --config)");
            };
            let cfg = load_config(&path)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            eprintln!("{}: ok", path.display());
            return Ok(());
        }
        Command::Impulse => ExperimentId::Impulse,
        Command::Mi => ExperimentId::MiSweep,
        Command::Ber { experiment } => experiment.into(),
    };
    let spec = ExperimentSpec {
        id,
        config_path: g.config.clone(),
        out_dir: g.out.clone().unwrap_or_else(|| PathBuf::from("results").join(id.as_str())),
        options: options(g)?,
    };
    let outcome = run_experiment(&spec, VERSION)?;
    info!("finished in {:.1} s", outcome.wall_time_s);
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            let config_error = err.chain().any(|c| {
                matches!(
                    c.downcast_ref::<molcomm::Error>(),
                    Some(molcomm::Error::Config { .. } | molcomm::Error::ConfigList(_) | molcomm::Error::Parse(_))
                )
            });
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
