//! Confusion matrices, threshold scores and rank AUC, for both the
//! biased-table identification and the ADR predictor.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("item outside the evaluated universe")]
    OutsideUniverse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predicted: &[bool], truth: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Confusion of two subsets of `universe`.
pub fn confusion_sets<T: Ord>(
    predicted: &BTreeSet<T>,
    truth: &BTreeSet<T>,
    universe: &BTreeSet<T>,
) -> Result<ConfusionMatrix, MetricsError> {
    if !predicted.is_subset(universe) || !truth.is_subset(universe) {
        return Err(MetricsError::OutsideUniverse);
    }
    let p: Vec<bool> = universe.iter().map(|x| predicted.contains(x)).collect();
    let t: Vec<bool> = universe.iter().map(|x| truth.contains(x)).collect();
    confusion(&p, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard scores; any `0 / 0` is taken as 0.
pub fn scores(cm: &ConfusionMatrix) -> Scores {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half, from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tie midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean, (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

/// The row reported for a model or detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub precision: f64,
    pub f1: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub averaging: Averaging,
    #[serde(flatten)]
    pub row: ScoreRow,
    /// Share of records whose arg-max class is right.
    pub exact_accuracy: f64,
    pub per_class: Vec<ConfusionMatrix>,
    /// Classes skipped in the AUC average for lacking positives or
    /// negatives.
    pub auc_skipped: Vec<usize>,
}

/// One-vs-rest scores for an `m`-class problem. `probs[i][c]` is the score
/// of class `c` for record `i`.
pub fn multiclass(
    predicted: &[usize],
    probs: &[Vec<f64>],
    truth: &[usize],
    m: usize,
    averaging: Averaging,
) -> Result<MulticlassReport, MetricsError> {
    for len in [predicted.len(), probs.len()] {
        if len != truth.len() {
            return Err(MetricsError::ShapeMismatch {
                expected: truth.len(),
                found: len,
            });
        }
    }
    if let Some(p) = probs.iter().find(|p| p.len() != m) {
        return Err(MetricsError::ShapeMismatch {
            expected: m,
            found: p.len(),
        });
    }
    let mut per_class = Vec::with_capacity(m);
    let mut aucs = Vec::with_capacity(m);
    let mut auc_skipped = Vec::new();
    for c in 0..m {
        let p: Vec<bool> = predicted.iter().map(|&y| y == c).collect();
        let t: Vec<bool> = truth.iter().map(|&y| y == c).collect();
        per_class.push(confusion(&p, &t)?);
        let s: Vec<f64> = probs.iter().map(|row| row[c]).collect();
        match auc(&s, &t) {
            Ok(a) => aucs.push(a),
            Err(MetricsError::SingleClass) => auc_skipped.push(c),
            Err(e) => return Err(e),
        }
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let (accuracy, precision, recall, f1) = match averaging {
        Averaging::Macro => {
            let all: Vec<Scores> = per_class.iter().map(scores).collect();
            let avg = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / m.max(1) as f64;
            (
                avg(|s| s.accuracy),
                avg(|s| s.precision),
                avg(|s| s.recall),
                avg(|s| s.f1),
            )
        }
        Averaging::Micro => {
            let mut total = ConfusionMatrix::default();
            per_class.iter().for_each(|cm| total.add(cm));
            let s = scores(&total);
            (s.accuracy, s.precision, s.recall, s.f1)
        }
    };
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(MulticlassReport {
        averaging,
        row: ScoreRow {
            accuracy,
            auc: mean(&aucs),
            precision,
            f1,
            recall,
        },
        exact_accuracy: ratio(hits as u64, truth.len() as u64),
        per_class,
        auc_skipped,
    })
}

/// Scores of the biased-table identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub confusion: ConfusionMatrix,
    #[serde(flatten)]
    pub scores: Scores,
    pub note: String,
}

impl IdentificationReport {
    pub fn new(confusion: ConfusionMatrix) -> Self {
        Self {
            scores: scores(&confusion),
            confusion,
            note: "an identification rate quoted as accuracy corresponds to recall here; both are listed".into(),
        }
    }
}

/// Summary written as JSON at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub predictor: Option<MulticlassReport>,
    pub bias_identification: Option<IdentificationReport>,
}
