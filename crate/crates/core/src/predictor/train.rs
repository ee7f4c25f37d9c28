use std::io::Write;

use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PredictorConfig;
use super::network::{loss, probabilities, stack_rows, summed_loss_and_grads};
use super::params::PredictorParams;
use super::PredictError;
use crate::domain::{AdrId, Dataset, Rng};

const INIT_STREAM: u64 = 1;

/// Stream of the dropout masks for one chunk of one epoch.
fn dropout_stream(epoch: usize, chunk: usize) -> u64 {
    (2 << 60) | ((epoch as u64) << 28) | chunk as u64
}

/// Per-epoch loss of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mean cross-entropy over the full batch with dropout off: entry 0 at
    /// initialization, entry `k` after epoch `k`.
    pub losses: Vec<f64>,
}

impl TrainingTrace {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Epoch transitions where the loss did not go up.
    pub fn non_increasing_steps(&self) -> usize {
        self.losses.windows(2).filter(|w| w[1] <= w[0]).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PredictError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss"]).map_err(csv_err)?;
        for (e, l) in self.losses.iter().enumerate() {
            out.write_record([e.to_string(), format!("{l:.17e}")])
                .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> PredictError {
    PredictError::Io(std::io::Error::other(e))
}

/// Feature matrix and labels of a dataset.
pub fn design_matrix(
    d: &Dataset,
    n_classes: usize,
) -> Result<(Array2<f64>, Vec<usize>), PredictError> {
    if d.is_empty() {
        return Err(PredictError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(d.len());
    let mut labels = Vec::with_capacity(d.len());
    for r in &d.records {
        if !r.is_complete() {
            return Err(PredictError::IncompleteFeatures {
                record: r.key().to_string(),
            });
        }
        let y = r.adr_label.index();
        if y >= n_classes {
            return Err(PredictError::LabelOutOfRange {
                label: y,
                classes: n_classes,
            });
        }
        rows.push(r.feature_vector());
        labels.push(y);
    }
    Ok((stack_rows(&rows), labels))
}

/// Full-batch loss and gradient, computed chunk by chunk in parallel and
/// reduced in chunk order so the result does not depend on the thread
/// count.
fn epoch_gradient(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: &Array2<f64>,
    labels: &[usize],
    epoch: usize,
) -> Result<PredictorParams, PredictError> {
    let n = x.nrows();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(cfg.chunk_rows)
        .map(|lo| (lo, (lo + cfg.chunk_rows).min(n)))
        .collect();
    let scale = 1.0 / n as f64;
    let parts: Vec<Result<PredictorParams, PredictError>> = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &(lo, hi))| {
            let mut rng = Rng::new(cfg.seed).fork(dropout_stream(epoch, c));
            summed_loss_and_grads(
                params,
                cfg,
                x.slice(s![lo..hi, ..]),
                &labels[lo..hi],
                Some(&mut rng),
                scale,
            )
            .map(|(_, g)| g)
        })
        .collect();
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("at least one chunk")?;
    for p in parts {
        total.scaled_add(1.0, &p?);
    }
    Ok(total)
}

fn eval_loss(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: &Array2<f64>,
    labels: &[usize],
) -> Result<f64, PredictError> {
    let n = x.nrows();
    let parts: Vec<Result<f64, PredictError>> = (0..n)
        .step_by(cfg.chunk_rows)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&lo| {
            let hi = (lo + cfg.chunk_rows).min(n);
            loss(params, cfg, x.slice(s![lo..hi, ..]), &labels[lo..hi])
                .map(|l| l * (hi - lo) as f64)
        })
        .collect();
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / n as f64)
}

/// Column means and standard deviations; constant columns get scale 1.
pub fn input_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty matrix");
    let scale = x
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, scale)
}

/// Rewrites the embedding so that raw inputs give what standardized
/// inputs gave: `((x - mean) / scale) · w + b = x · w' + b'`.
fn fold_standardization(params: &mut PredictorParams, mean: &Array1<f64>, scale: &Array1<f64>) {
    let w = &mut params.embed.w;
    for (mut row, &s) in w.outer_iter_mut().zip(scale) {
        row /= s;
    }
    let shift = mean.dot(&*w);
    params.embed.b -= &shift;
}

/// Outcome of a descent run. `diverged` is the epoch at which the loss or
/// the parameters stopped being finite.
struct Run {
    params: PredictorParams,
    trace: TrainingTrace,
    diverged: Option<usize>,
}

fn descend(x: &Array2<f64>, labels: &[usize], cfg: &PredictorConfig) -> Result<Run, PredictError> {
    cfg.validate()?;
    if x.nrows() == 0 {
        return Err(PredictError::EmptyDataset);
    }
    let (mean, scale) = input_moments(x);
    let x = &((x - &mean) / &scale);
    let mut params =
        PredictorParams::init(cfg, x.ncols(), &mut Rng::new(cfg.seed).fork(INIT_STREAM));
    let mut trace = TrainingTrace {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        losses: Vec::with_capacity(cfg.epochs + 1),
    };
    for epoch in 0..=cfg.epochs {
        let l = eval_loss(&params, cfg, x, labels)?;
        if !l.is_finite() {
            return Ok(Run {
                params,
                trace,
                diverged: Some(epoch),
            });
        }
        trace.losses.push(l);
        if epoch == cfg.epochs {
            break;
        }
        let g = epoch_gradient(&params, cfg, x, labels, epoch)?;
        params.scaled_add(-cfg.learning_rate, &g);
        if !params.all_finite() {
            return Ok(Run {
                params,
                trace,
                diverged: Some(epoch + 1),
            });
        }
    }
    fold_standardization(&mut params, &mean, &scale);
    Ok(Run {
        params,
        trace,
        diverged: None,
    })
}

/// Full-batch gradient descent from a seeded initialization.
///
/// The network is trained on column-standardized inputs and the scaling is
/// folded into the embedding afterwards, so the returned parameters take
/// the features as given.
pub fn train_matrix(
    x: &Array2<f64>,
    labels: &[usize],
    cfg: &PredictorConfig,
) -> Result<(PredictorParams, TrainingTrace), PredictError> {
    let run = descend(x, labels, cfg)?;
    match run.diverged {
        Some(epoch) => Err(PredictError::NonFiniteLoss { epoch }),
        None => Ok((run.params, run.trace)),
    }
}

/// The loss curve of a run, kept up to the point of divergence, and the
/// epoch at which it diverged if it did.
pub fn loss_curve(
    d: &Dataset,
    cfg: &PredictorConfig,
) -> Result<(TrainingTrace, Option<usize>), PredictError> {
    let (x, labels) = design_matrix(d, cfg.n_classes)?;
    let run = descend(&x, &labels, cfg)?;
    Ok((run.trace, run.diverged))
}

/// Trains on every record of `clean`, labelled by its ADR.
pub fn train(
    clean: &Dataset,
    cfg: &PredictorConfig,
) -> Result<(PredictorParams, TrainingTrace), PredictError> {
    let (x, labels) = design_matrix(clean, cfg.n_classes)?;
    train_matrix(&x, &labels, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPrediction {
    pub record_id: String,
    pub class_probs: Vec<f64>,
    pub predicted_adr: AdrId,
    pub p: f64,
    pub flagged: bool,
}

impl SignalPrediction {
    pub fn from_probs(record_id: String, class_probs: Vec<f64>, threshold: f64) -> Self {
        let (best, p) =
            class_probs
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                );
        Self {
            record_id,
            class_probs,
            predicted_adr: AdrId(best as u16),
            p,
            flagged: p >= threshold,
        }
    }
}

/// Softmax prediction per record, flagged at `cfg.signal_threshold`.
pub fn predict_signals(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    d: &Dataset,
) -> Result<Vec<SignalPrediction>, PredictError> {
    if d.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<f64>> = d.records.iter().map(|r| r.feature_vector()).collect();
    let x = stack_rows(&rows);
    let probs = probabilities(params, cfg, x.view())?;
    Ok(d.records
        .iter()
        .zip(probs.outer_iter())
        .map(|(r, p)| {
            SignalPrediction::from_probs(r.key().to_string(), p.to_vec(), cfg.signal_threshold)
        })
        .collect())
}

pub fn write_predictions_csv<W: Write>(
    preds: &[SignalPrediction],
    w: W,
) -> Result<(), PredictError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["record_id", "predicted_adr", "p", "flagged"])
        .map_err(csv_err)?;
    for p in preds {
        out.write_record([
            p.record_id.clone(),
            p.predicted_adr.0.to_string(),
            format!("{:.17e}", p.p),
            p.flagged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
