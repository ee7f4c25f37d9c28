//! `adrsig`: split a FAERS-style corpus across simulated clients, flag biased
//! ADR tables, compare disproportionality statistics and train the signal
//! predictor on the cleaned data.

mod config;
mod error;
mod manifest;
mod stages;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{Overrides, PipelineConfig, Source};
use crate::error::CliError;
use crate::manifest::{Manifest, Recorder};

#[derive(Debug, Parser)]
#[command(
    name = "adrsig",
    version,
    about = "Federated biased-table detection and ADR signal prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Distance threshold for flagging a table.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Predictor learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Predictor epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Run directory for outputs and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input file or directory of the stage.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a FAERS quarter directory into the canonical dataset format.
    Ingest,
    /// Generate a synthetic corpus.
    Synth,
    /// Preprocess a dataset and deal it across clients.
    Split,
    /// Flag biased tables of a split directory and assemble the clean dataset.
    Detect,
    /// ROR and PRR of an original dataset against a clean one.
    Signal {
        /// The clean dataset; `--input` is the original.
        #[arg(long)]
        clean: PathBuf,
    },
    /// Train the predictor on a dataset.
    Train,
    /// Score a dataset with trained parameters.
    Predict {
        #[arg(long)]
        params: PathBuf,
    },
    /// Every stage from corpus to metrics.
    Pipeline,
    /// Summarize a finished run directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(error::exit::OK as u8),
        Err(e) => {
            eprintln!("adrsig: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        epsilon: cli.epsilon,
        lr: cli.lr,
        epochs: cli.epochs,
        out: cli.out.clone(),
        input: cli.input.clone(),
    };
    if let Command::Report = cli.command {
        let input = overrides
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("report needs --input <run dir>".into()))?;
        return report(input, overrides.out.as_deref());
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Ingest => {
            let input = cfg.input_path()?.to_path_buf();
            recorded(&cfg, "ingest", &[&input], |rec| {
                stages::ingest(&cfg, rec).map(drop)
            })
        }
        Command::Synth => {
            recorded::<PathBuf>(&cfg, "synth", &[], |rec| stages::synth(&cfg, rec).map(drop))
        }
        Command::Split => {
            let input = cfg.input_path()?.to_path_buf();
            let d = stages::load_dataset(&input)?;
            recorded(&cfg, "split", &dataset_files(&input), |rec| {
                stages::split(&cfg, &d, rec).map(drop)
            })
        }
        Command::Detect => {
            let input = cfg.input_path()?.to_path_buf();
            let split = stages::load_split(&input)?;
            recorded(&cfg, "detect", &[&input], |rec| {
                let (clean, report) = stages::detect(&cfg, &split, rec)?;
                println!(
                    "flagged {} of {} tables; clean dataset has {} records",
                    report.flagged.len(),
                    report.tables.len(),
                    clean.len()
                );
                Ok(())
            })
        }
        Command::Signal { clean } => {
            let input = cfg.input_path()?.to_path_buf();
            let original = stages::load_dataset(&input)?;
            let cleaned = stages::load_dataset(clean)?;
            let mut inputs = dataset_files(&input);
            inputs.extend(dataset_files(clean));
            recorded(&cfg, "signal", &inputs, |rec| {
                stages::signal(&original, &cleaned, rec)
            })
        }
        Command::Train => {
            let input = cfg.input_path()?.to_path_buf();
            let d = stages::load_dataset(&input)?;
            recorded(&cfg, "train", &dataset_files(&input), |rec| {
                stages::train_stage(&cfg, &d, rec).map(drop)
            })
        }
        Command::Predict { params } => {
            let input = cfg.input_path()?.to_path_buf();
            let d = stages::load_dataset(&input)?;
            let p = stages::load_params(params, &cfg.predictor_for(d.adr_count()))?;
            let mut inputs = dataset_files(&input);
            inputs.push(params.clone());
            recorded(&cfg, "predict", &inputs, |rec| {
                stages::predict(&cfg, &p, &d, rec).map(drop)
            })
        }
        Command::Pipeline => {
            let inputs = match (cfg.input.source, &cfg.paths.input) {
                (Source::Faers, Some(p)) => vec![p.clone()],
                _ => Vec::new(),
            };
            recorded(&cfg, "pipeline", &inputs, |rec| pipeline(&cfg, rec))
        }
        Command::Report => unreachable!("handled before the config is loaded"),
    }
}

/// A dataset CSV and its sidecar.
fn dataset_files(csv: &Path) -> Vec<PathBuf> {
    vec![csv.to_path_buf(), adrsig_core::domain::sidecar_path(csv)]
}

/// Runs `body` under a manifest in the output directory, marking the run
/// failed if it returns an error.
fn recorded<P: AsRef<Path>>(
    cfg: &PipelineConfig,
    command: &str,
    inputs: &[P],
    body: impl FnOnce(&mut Recorder) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let inputs: Vec<&Path> = inputs.iter().map(AsRef::as_ref).collect();
    let mut rec = Recorder::start(&cfg.output_dir(), command, cfg.hash(), &inputs)?;
    match body(&mut rec) {
        Ok(()) => {
            rec.finish()?;
            Ok(())
        }
        Err(e) => {
            rec.fail(&e)?;
            Err(e)
        }
    }
}

fn pipeline(cfg: &PipelineConfig, rec: &mut Recorder) -> Result<(), CliError> {
    let corpus = match cfg.input.source {
        Source::Synthetic => stages::synth(cfg, rec)?,
        Source::Faers => stages::ingest(cfg, rec)?,
    };
    let split = stages::split(cfg, &corpus, rec)?;
    let (clean, report) = stages::detect(cfg, &split.split, rec)?;
    stages::signal(&split.preprocessed, &clean, rec)?;
    let (train_set, test_set) = stages::holdout(cfg, &clean);
    let params = stages::train_stage(cfg, &train_set, rec)?;
    let preds = stages::predict(cfg, &params, &test_set, rec)?;
    let identification = if split.annotation.is_empty() {
        None
    } else {
        Some(stages::identification(
            &split.split,
            &report,
            &split.annotation,
        )?)
    };
    let metrics = stages::evaluate(cfg, &preds, &test_set, identification, rec)?;
    println!(
        "flagged {} of {} tables; clean {} of {} records",
        report.flagged.len(),
        report.tables.len(),
        clean.len(),
        split.preprocessed.len()
    );
    if let Some(p) = &metrics.predictor {
        println!(
            "predictor on {} held-out records: accuracy {:.4}, auc {:?}",
            test_set.len(),
            p.row.accuracy,
            p.row.auc
        );
    }
    Ok(())
}

/// Reads a run directory and prints a JSON summary. With `--out` the
/// summary is also written there as `report.json`.
fn report(dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let manifest = Manifest::read(dir)?;
    let read_json = |name: &str| -> Result<Option<serde_json::Value>, CliError> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| CliError::input(&path, e))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CliError::input(&path, e))
    };
    let detection = read_json(stages::DETECTION)?;
    let flagged = detection
        .as_ref()
        .and_then(|d| d.get("flagged").cloned())
        .unwrap_or(serde_json::Value::Null);
    let summary = json!({
        "command": manifest.command,
        "status": manifest.status,
        "error": manifest.error,
        "config_hash": manifest.config_hash,
        "stages": manifest.stages.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        "flagged_tables": flagged,
        "cleaning": read_json(stages::CLEANING)?,
        "metrics": read_json(stages::METRICS)?,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    // A closed pipe on stdout is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
        let path = out.join("report.json");
        fs::write(&path, text + "\n").map_err(|e| CliError::output(&path, e))?;
    }
    Ok(())
}
