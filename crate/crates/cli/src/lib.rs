//! `gridwatch` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed input, incompatible model), 3 a `--strict`
//! benchmark that missed its targets.

pub mod config;
pub mod corpus;
pub mod detect;
pub mod error;
pub mod output;
pub mod sample_file;
pub mod simulate;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gridwatch_nn::detectors::{HifClassifier, HIF_MODEL_KIND};
use gridwatch_pipeline::hif::run_hif_benchmark;
use serde_json::json;

use config::RunConfig;
use error::{CliError, Result, EXIT_OK, EXIT_USAGE};
use output::{Format, Output};
use simulate::SimKind;
use train::Task;

#[derive(Debug, Parser)]
#[command(name = "gridwatch", version, about = "Electricity network condition monitoring")]
pub struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file for records, or the corpus directory for `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Lines)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic corpus with its manifest.
    Simulate {
        #[arg(long, value_enum, default_value_t = SimKind::All)]
        kind: SimKind,
    },
    /// Classifies feature maps of a current record.
    DetectHif {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Runs the threaded stream chain instead of a batch pass.
        #[arg(long)]
        stream: bool,
    },
    /// Tracks swells, dips, interruptions and rapid changes in a voltage record.
    DetectPq {
        #[arg(long)]
        input: PathBuf,
    },
    /// Detects switching events and names the appliance behind each.
    IdentifyLoad {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        voltage: PathBuf,
        #[arg(long)]
        current: PathBuf,
    },
    /// Estimates one appliance's consumption from an aggregate power series.
    Disaggregate {
        /// Directory of CVAE model files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        appliance: String,
        /// `seconds watts` aggregate readings.
        #[arg(long)]
        series: PathBuf,
        /// Ground truth for scoring, in the same format.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Writes the estimate as `seconds watts` lines.
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Trains a model on a corpus; the model is written to `--out`.
    Train {
        /// hif2, hif3, loadid or disagg[:appliance]
        task: Task,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Scores a model on the held-out rows of a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Streams synthetic current through the HIF chain in real time.
    Bench {
        /// Trained HIF model; an untrained network is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seconds: Option<f64>,
        /// Exits with status 3 when a target is missed.
        #[arg(long)]
        strict: bool,
    },
    /// Prints the default configuration.
    Config,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("GRIDWATCH_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("--out is required: {what}")))
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Config => {
            print!("{}", RunConfig::documented_defaults());
            Ok(())
        }
        Command::Simulate { kind } => {
            let dir = require(&cli.out, "the corpus directory")?;
            let mut out = Output::new(cli.format, None)?;
            simulate::simulate(kind, &cfg, dir, &mut out)?;
            out.finish()
        }
        Command::Train { task, corpus } => {
            let model_out = require(&cli.out, "the model file")?;
            let mut out = Output::new(cli.format, None)?;
            train::train(&task, &corpus, model_out, &cfg, &mut out)?;
            out.finish()
        }
        command => {
            let mut out = Output::new(cli.format, cli.out.as_deref())?;
            match command {
                Command::DetectHif { model, input, stream } => detect::detect_hif(&model, &input, stream, &mut out)?,
                Command::DetectPq { input } => detect::detect_pq(&input, &cfg, &mut out)?,
                Command::IdentifyLoad { model, voltage, current } => {
                    detect::identify_load(&model, &voltage, &current, &cfg, &mut out)?
                }
                Command::Disaggregate {
                    models,
                    appliance,
                    series,
                    truth,
                    estimate,
                } => detect::disaggregate(&models, &appliance, &series, truth.as_deref(), estimate.as_deref(), &mut out)?,
                Command::Eval { model, corpus } => train::eval(&model, &corpus, &cfg, &mut out)?,
                Command::Bench { model, seconds, strict } => bench(model.as_deref(), seconds, strict, &cfg, &mut out)?,
                Command::Config | Command::Simulate { .. } | Command::Train { .. } => unreachable!("handled above"),
            }
            out.finish()
        }
    }
}

fn bench(model: Option<&Path>, seconds: Option<f64>, strict: bool, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let classifier = match model {
        Some(p) => HifClassifier::from_model_file(&detect::load_model(p, HIF_MODEL_KIND)?)?,
        None => {
            log::warn!("no model given; benchmarking an untrained classifier");
            HifClassifier::new(2, cfg.seed)?
        }
    };
    let mut bcfg = cfg.bench.clone();
    bcfg.seed = cfg.seed;
    if let Some(s) = seconds {
        bcfg.seconds = s;
    }
    let (report, _) = run_hif_benchmark(&classifier, &bcfg)?;
    let mut rec = serde_json::to_value(&report)?;
    rec["classifier_trained"] = json!(classifier.trained);
    out.record(&rec)?;
    if strict && !report.passed {
        return Err(CliError::Violation(report.failures.join("; ")));
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gridwatch: {e}");
            e.exit_code()
        }
    }
}
