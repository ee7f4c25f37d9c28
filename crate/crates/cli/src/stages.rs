//! The pipeline stages. Each one takes in-memory inputs, writes its files
//! into the run directory and records them in the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use adrsig_core::detect::{apply_threshold, assemble_clean, measure, DetectionReport};
use adrsig_core::domain::{read_dataset, write_dataset};
use adrsig_core::ingest::{assemble_dataset, generate_with, inject_bias_split, parse_quarter};
use adrsig_core::metrics::{confusion, multiclass, IdentificationReport, MetricsReport};
use adrsig_core::predictor::{
    loss_curve, predict_signals, read_params, train, write_params, write_predictions_csv,
    PredictorParams, SignalPrediction, TrainingTrace,
};
use adrsig_core::signal::{compare, write_report_csv};
use adrsig_core::split::{
    clean, preprocess, read_split, split_uniform, write_split, CleaningReport,
};
use adrsig_core::{BiasAnnotation, Dataset, Provenance, Rng, SplitDataset};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::Recorder;

pub const DATASET: &str = "dataset.csv";
pub const DATASET_SIDECAR: &str = "dataset.json";
pub const SOURCE_SUMMARY: &str = "source_summary.json";
pub const PREPROCESSED: &str = "preprocessed.csv";
pub const PREPROCESSED_SIDECAR: &str = "preprocessed.json";
pub const CLEANING: &str = "cleaning.json";
pub const SPLIT_DIR: &str = "split";
pub const BIAS: &str = "bias.json";
pub const DETECTION: &str = "detection.json";
pub const PPGCM: &str = "ppgcm.csv";
pub const CLEAN: &str = "clean.csv";
pub const CLEAN_SIDECAR: &str = "clean.json";
pub const SIGNALS: &str = "signals.csv";
pub const PARAMS: &str = "params.bin";
pub const TRACE: &str = "trace.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const METRICS: &str = "metrics.json";

/// Seed streams forked off the global seed.
const SYNTH_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const HOLDOUT_STREAM: u64 = 3;

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::output(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::output(dir.join(name), e))?;
    bytes.push(b'\n');
    write_file(dir, name, &bytes)
}

fn save_dataset(dir: &Path, name: &str, d: &Dataset) -> Result<(), CliError> {
    let path = dir.join(name);
    write_dataset(d, &path).map_err(|e| CliError::output(&path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Ok(read_dataset(path)?)
}

pub fn load_split(path: &Path) -> Result<SplitDataset, CliError> {
    Ok(read_split(path)?)
}

pub fn load_params(
    path: &Path,
    cfg: &adrsig_core::predictor::PredictorConfig,
) -> Result<PredictorParams, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::input(path, e))?;
    read_params(cfg, std::io::BufReader::new(file)).map_err(|e| CliError::input(path, e))
}

#[derive(Debug, Serialize)]
struct SourceSummary {
    records: usize,
    quarter: Option<String>,
    source: String,
    /// What `clean` would remove; the dataset itself is written unchanged.
    cleaning: CleaningReport,
}

/// Parses one FAERS quarter from `cfg.paths.input`.
pub fn ingest(cfg: &PipelineConfig, rec: &mut Recorder) -> Result<Dataset, CliError> {
    let dir = cfg.input_path()?;
    let quarter = cfg
        .quarter()?
        .ok_or_else(|| CliError::Config("input.quarter is required for ingest".into()))?;
    let raw = parse_quarter(dir, quarter)?;
    let d = assemble_dataset(&raw, &cfg.schema()?)?;
    finish_source(rec, "ingest", &d, Some(quarter.to_string()), "faers")?;
    Ok(d)
}

/// Generates the synthetic corpus described by `cfg.input`.
pub fn synth(cfg: &PipelineConfig, rec: &mut Recorder) -> Result<Dataset, CliError> {
    let mut rng = Rng::new(cfg.seed).fork(SYNTH_STREAM);
    let (d, _) = generate_with(
        &cfg.input.synthetic,
        cfg.input.size,
        cfg.input.n_adr,
        &cfg.schema()?,
        &mut rng,
    );
    finish_source(rec, "synth", &d, None, "synthetic")?;
    Ok(d)
}

fn finish_source(
    rec: &mut Recorder,
    stage: &str,
    d: &Dataset,
    quarter: Option<String>,
    source: &str,
) -> Result<(), CliError> {
    let (_, cleaning) = clean(d);
    save_dataset(rec.dir(), DATASET, d)?;
    let summary = SourceSummary {
        records: d.len(),
        quarter,
        source: source.into(),
        cleaning,
    };
    write_json(rec.dir(), SOURCE_SUMMARY, &summary)?;
    rec.stage(stage, &[DATASET, DATASET_SIDECAR, SOURCE_SUMMARY])
}

pub struct SplitOutput {
    pub preprocessed: Dataset,
    pub split: SplitDataset,
    pub annotation: BiasAnnotation,
}

/// Preprocesses, deals the records across clients and, when configured,
/// injects bias into the resulting tables.
pub fn split(
    cfg: &PipelineConfig,
    d: &Dataset,
    rec: &mut Recorder,
) -> Result<SplitOutput, CliError> {
    let (pre, report) = preprocess(d)?;
    let mut rng = Rng::new(cfg.seed).fork(SPLIT_STREAM);
    let split = split_uniform(&pre, cfg.split.n, &mut rng)?;
    let (split, annotation) = match &cfg.bias {
        Some(spec) => inject_bias_split(&split, spec)?,
        None => (split, BiasAnnotation::default()),
    };
    let dir = rec.dir().to_path_buf();
    // The split is the detection input; `preprocessed.csv` is the same
    // records with any injected bias applied.
    let preprocessed = split.flatten(Provenance::Preprocessed);
    save_dataset(&dir, PREPROCESSED, &preprocessed)?;
    write_json(&dir, CLEANING, &report)?;
    let split_dir = dir.join(SPLIT_DIR);
    if split_dir.exists() {
        fs::remove_dir_all(&split_dir).map_err(|e| CliError::output(&split_dir, e))?;
    }
    write_split(&split, &split_dir).map_err(|e| CliError::output(&split_dir, e))?;
    write_json(&dir, BIAS, &annotation)?;
    rec.stage(
        "split",
        &[
            PREPROCESSED,
            PREPROCESSED_SIDECAR,
            CLEANING,
            SPLIT_DIR,
            BIAS,
        ],
    )?;
    Ok(SplitOutput {
        preprocessed,
        split,
        annotation,
    })
}

/// One federated round. The report is written before the clean dataset is
/// assembled, so it survives a run in which every table is flagged.
pub fn detect(
    cfg: &PipelineConfig,
    split: &SplitDataset,
    rec: &mut Recorder,
) -> Result<(Dataset, DetectionReport), CliError> {
    let mut report = measure(split, &cfg.detection)?;
    apply_threshold(&mut report, &cfg.detection);
    let dir = rec.dir().to_path_buf();
    write_json(&dir, DETECTION, &report)?;
    let mut ppgcm = Vec::new();
    report
        .write_ppgcm_csv(&split.schema, &mut ppgcm)
        .map_err(|e| CliError::output(dir.join(PPGCM), e))?;
    write_file(&dir, PPGCM, &ppgcm)?;
    let clean = assemble_clean(split, &report.flagged)?;
    save_dataset(&dir, CLEAN, &clean)?;
    rec.stage("detect", &[DETECTION, PPGCM, CLEAN, CLEAN_SIDECAR])?;
    Ok((clean, report))
}

pub fn signal(original: &Dataset, clean: &Dataset, rec: &mut Recorder) -> Result<(), CliError> {
    let pairs = compare(original, clean)?;
    let mut buf = Vec::new();
    write_report_csv(&pairs, &original.adr_universe, &mut buf)
        .map_err(|e| CliError::output(rec.dir().join(SIGNALS), e))?;
    write_file(rec.dir(), SIGNALS, &buf)?;
    rec.stage("signal", &[SIGNALS])
}

/// `trace_lr<rate>.csv` for an extra traced learning rate.
pub fn trace_name(rate: f64) -> String {
    format!("trace_lr{rate}.csv")
}

fn trace_bytes(t: &TrainingTrace) -> Vec<u8> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).expect("writing to memory");
    buf
}

/// Trains on `d`, plus one loss-curve run per extra traced rate.
pub fn train_stage(
    cfg: &PipelineConfig,
    d: &Dataset,
    rec: &mut Recorder,
) -> Result<PredictorParams, CliError> {
    let pcfg = cfg.predictor_for(d.adr_count());
    let (params, trace) = train(d, &pcfg)?;
    let dir = rec.dir().to_path_buf();
    let mut buf = Vec::new();
    write_params(&params, &mut buf).expect("writing to memory");
    write_file(&dir, PARAMS, &buf)?;
    write_file(&dir, TRACE, &trace_bytes(&trace))?;
    let mut outputs = vec![PARAMS.to_string(), TRACE.to_string()];
    for &rate in &cfg.evaluation.trace_rates {
        let mut extra = pcfg.clone();
        extra.learning_rate = rate;
        let name = trace_name(rate);
        // A diverging extra run is part of the curve, not a failure.
        let (t, _) = loss_curve(d, &extra)?;
        write_file(&dir, &name, &trace_bytes(&t))?;
        outputs.push(name);
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    rec.stage("train", &refs)?;
    Ok(params)
}

pub fn predict(
    cfg: &PipelineConfig,
    params: &PredictorParams,
    d: &Dataset,
    rec: &mut Recorder,
) -> Result<Vec<SignalPrediction>, CliError> {
    let pcfg = cfg.predictor_for(d.adr_count());
    let preds = predict_signals(params, &pcfg, d)?;
    let mut buf = Vec::new();
    write_predictions_csv(&preds, &mut buf).expect("writing to memory");
    write_file(rec.dir(), PREDICTIONS, &buf)?;
    rec.stage("predict", &[PREDICTIONS])?;
    Ok(preds)
}

/// A seeded share of `d` held out for scoring: `(train, test)`, each in the
/// original record order.
pub fn holdout(cfg: &PipelineConfig, d: &Dataset) -> (Dataset, Dataset) {
    let n_test = (d.len() as f64 * cfg.evaluation.test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..d.len()).collect();
    Rng::new(cfg.seed).fork(HOLDOUT_STREAM).shuffle(&mut order);
    let test: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, r) in d.records.iter().enumerate() {
        if test.contains(&i) {
            te.push(r.clone());
        } else {
            tr.push(r.clone());
        }
    }
    (d.with_records(tr), d.with_records(te))
}

/// Record-level identification scores: a record is flagged when its table
/// is, and biased when the annotation lists it.
pub fn identification(
    split: &SplitDataset,
    report: &DetectionReport,
    annotation: &BiasAnnotation,
) -> Result<IdentificationReport, CliError> {
    let mut flagged = Vec::new();
    let mut truth = Vec::new();
    for t in split.tables() {
        let hit = report.flagged.contains(&t.key());
        for r in &t.records {
            flagged.push(hit);
            truth.push(annotation.biased_record_ids.contains(&r.key()));
        }
    }
    Ok(IdentificationReport::new(confusion(&flagged, &truth)?))
}

pub fn evaluate(
    cfg: &PipelineConfig,
    preds: &[SignalPrediction],
    test: &Dataset,
    identification: Option<IdentificationReport>,
    rec: &mut Recorder,
) -> Result<MetricsReport, CliError> {
    let predictor = if test.is_empty() {
        None
    } else {
        let predicted: Vec<usize> = preds.iter().map(|p| p.predicted_adr.index()).collect();
        let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.class_probs.clone()).collect();
        let truth: Vec<usize> = test.records.iter().map(|r| r.adr_label.index()).collect();
        Some(multiclass(
            &predicted,
            &probs,
            &truth,
            test.adr_count(),
            cfg.evaluation.averaging,
        )?)
    };
    let report = MetricsReport {
        predictor,
        bias_identification: identification,
    };
    write_json(rec.dir(), METRICS, &report)?;
    rec.stage("evaluate", &[METRICS])?;
    Ok(report)
}
