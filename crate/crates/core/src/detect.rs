//! One simulated federated round for bias detection.
//!
//! Every `(client, ADR)` table trains a logistic-regression classifier for
//! `outcome_severe`. Classifiers of the same ADR are averaged into a
//! pre-aggregated partial global model, and a table whose parameters sit at
//! Euclidean distance `>= epsilon` from that average is flagged as biased.
//! The clean dataset is everything else.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AdrId, AdrTable, Dataset, FeatureSchema, Provenance, SplitDataset, TableKey};

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("table {0} is empty")]
    EmptyTable(TableKey),
    #[error("table {0} has missing feature values")]
    IncompleteFeatures(TableKey),
    #[error("classifiers for different ADRs cannot be aggregated")]
    MixedAdr,
    #[error("no classifiers to aggregate")]
    NoClassifiers,
    #[error("parameter length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("every table was flagged as biased; the clean dataset would be empty")]
    AllTablesFlagged,
    #[error("flagged table {0} is not part of the split")]
    UnknownTable(TableKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Reserved for stochastic variants; full-batch descent from zero does
    /// not consume randomness.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub epsilon: f64,
    pub training: TrainingConfig,
    pub min_table_size: usize,
    /// Weight each client by table size when averaging.
    pub size_weighted: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 4.0,
            training: TrainingConfig::default(),
            min_table_size: 5,
            size_weighted: false,
        }
    }
}

/// Logistic-regression parameters of one table: weights in schema column
/// order, then the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalClassifier {
    pub client_id: usize,
    pub adr_id: AdrId,
    pub params: Vec<f64>,
    pub train_size: usize,
    pub final_loss: f64,
    /// All labels in the table were identical.
    pub degenerate: bool,
}

impl LocalClassifier {
    pub fn key(&self) -> TableKey {
        TableKey::new(self.client_id, self.adr_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedClassifier {
    pub adr_id: AdrId,
    pub params: Vec<f64>,
    pub contributor_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDistance {
    pub client_id: usize,
    pub adr_id: AdrId,
    pub table_size: usize,
    pub distance: f64,
    pub final_loss: f64,
    /// Single-contributor ADR: the distance is zero by construction.
    pub exempt: bool,
    pub flagged: bool,
}

impl TableDistance {
    pub fn key(&self) -> TableKey {
        TableKey::new(self.client_id, self.adr_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub epsilon: f64,
    pub tables: Vec<TableDistance>,
    pub flagged: BTreeSet<TableKey>,
    pub ppgcm_per_adr: Vec<AggregatedClassifier>,
    /// Tables whose labels were all identical.
    pub degenerate: Vec<TableKey>,
}

impl DetectionReport {
    pub fn distances(&self) -> BTreeMap<TableKey, f64> {
        self.tables.iter().map(|t| (t.key(), t.distance)).collect()
    }

    pub fn distance(&self, key: TableKey) -> Option<f64> {
        self.tables
            .iter()
            .find(|t| t.key() == key)
            .map(|t| t.distance)
    }

    /// Parameters of each aggregated model, one row per ADR, with weight
    /// columns named after the schema.
    pub fn write_ppgcm_csv<W: Write>(&self, schema: &FeatureSchema, w: W) -> csv::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["adr_id".to_string(), "contributors".to_string()];
        header.extend(schema.names().map(|n| format!("w:{n}")));
        header.push("bias".into());
        wtr.write_record(&header)?;
        for g in &self.ppgcm_per_adr {
            let contributors = g
                .contributor_ids
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let mut row = vec![g.adr_id.to_string(), contributors];
            row.extend(g.params.iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy from logits, `log(1 + e^z) - y z` in a form
/// that does not overflow.
fn bce(z: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let n = z.len() as f64;
    z.iter()
        .zip(y)
        .map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
        .sum::<f64>()
        / n
}

/// Fits the table's logistic regression by full-batch gradient descent from
/// zero for exactly `cfg.epochs` steps.
pub fn train_local(table: &AdrTable, cfg: &TrainingConfig) -> Result<LocalClassifier, DetectError> {
    let key = table.key();
    if table.is_empty() {
        return Err(DetectError::EmptyTable(key));
    }
    let n = table.len();
    let d = table.records[0].features.len();
    let mut x = Array2::<f64>::zeros((n, d));
    for (i, r) in table.records.iter().enumerate() {
        if r.features.len() != d {
            return Err(DetectError::LengthMismatch {
                expected: d,
                found: r.features.len(),
            });
        }
        for (k, v) in r.features.iter().enumerate() {
            x[[i, k]] = v.ok_or(DetectError::IncompleteFeatures(key))?;
        }
    }
    let y: Array1<f64> = table
        .records
        .iter()
        .map(|r| if r.outcome_severe { 1.0 } else { 0.0 })
        .collect();
    let degenerate = y.iter().all(|&v| v == y[0]);

    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.epochs {
        let z = x.dot(&w) + b;
        let residual = z.mapv(sigmoid) - &y;
        let gw = x.t().dot(&residual) * inv_n;
        let gb = residual.sum() * inv_n;
        w.scaled_add(-cfg.learning_rate, &gw);
        b -= cfg.learning_rate * gb;
    }
    let final_loss = bce(&(x.dot(&w) + b), &y);
    let mut params = w.to_vec();
    params.push(b);
    Ok(LocalClassifier {
        client_id: table.client_id,
        adr_id: table.adr_id,
        params,
        train_size: n,
        final_loss,
        degenerate,
    })
}

/// Elementwise mean of one ADR's classifiers, accumulated in ascending
/// client order whatever the input order.
pub fn pre_aggregate(
    classifiers: &[LocalClassifier],
    size_weighted: bool,
) -> Result<AggregatedClassifier, DetectError> {
    let first = classifiers.first().ok_or(DetectError::NoClassifiers)?;
    let len = first.params.len();
    for c in classifiers {
        if c.adr_id != first.adr_id {
            return Err(DetectError::MixedAdr);
        }
        if c.params.len() != len {
            return Err(DetectError::LengthMismatch {
                expected: len,
                found: c.params.len(),
            });
        }
    }
    let mut sorted: Vec<&LocalClassifier> = classifiers.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    let total: f64 = if size_weighted {
        sorted.iter().map(|c| c.train_size as f64).sum()
    } else {
        sorted.len() as f64
    };
    let mut params = vec![0.0; len];
    for c in &sorted {
        let weight = if size_weighted {
            c.train_size as f64
        } else {
            1.0
        };
        for (acc, p) in params.iter_mut().zip(&c.params) {
            *acc += weight * p;
        }
    }
    for p in &mut params {
        *p /= total;
    }
    Ok(AggregatedClassifier {
        adr_id: first.adr_id,
        params,
        contributor_ids: sorted.iter().map(|c| c.client_id).collect(),
    })
}

pub fn distance(lb: &LocalClassifier, g: &AggregatedClassifier) -> Result<f64, DetectError> {
    if lb.adr_id != g.adr_id {
        return Err(DetectError::MixedAdr);
    }
    l2(&lb.params, &g.params)
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> Result<f64, DetectError> {
    if a.len() != b.len() {
        return Err(DetectError::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Keys with `distance >= epsilon`, at least `min_table_size` records, and
/// more than one contributor for their ADR.
pub fn flag_biased(tables: &[TableDistance], cfg: &DetectionConfig) -> BTreeSet<TableKey> {
    tables
        .iter()
        .filter(|t| !t.exempt && t.table_size >= cfg.min_table_size && t.distance >= cfg.epsilon)
        .map(TableDistance::key)
        .collect()
}

/// Unflagged tables concatenated in client, ADR, record order.
pub fn assemble_clean(
    split: &SplitDataset,
    flagged: &BTreeSet<TableKey>,
) -> Result<Dataset, DetectError> {
    let keys = split.table_keys();
    if let Some(k) = flagged.iter().find(|k| !keys.contains(k)) {
        return Err(DetectError::UnknownTable(*k));
    }
    let records: Vec<_> = split
        .tables()
        .filter(|t| !flagged.contains(&t.key()))
        .flat_map(|t| t.records.iter().cloned())
        .collect();
    if records.is_empty() {
        return Err(DetectError::AllTablesFlagged);
    }
    Ok(Dataset {
        records,
        schema: split.schema.clone(),
        adr_universe: split.adr_universe.clone(),
        provenance: Provenance::Clean,
    })
}

/// Local training, per-ADR aggregation and distances, without flagging.
pub fn measure(
    split: &SplitDataset,
    cfg: &DetectionConfig,
) -> Result<DetectionReport, DetectError> {
    let tables: Vec<&AdrTable> = split.tables().filter(|t| !t.is_empty()).collect();
    let locals: Vec<LocalClassifier> = tables
        .par_iter()
        .map(|t| train_local(t, &cfg.training))
        .collect::<Result<_, _>>()?;

    let mut by_adr: BTreeMap<AdrId, Vec<LocalClassifier>> = BTreeMap::new();
    for lb in &locals {
        by_adr.entry(lb.adr_id).or_default().push(lb.clone());
    }
    let mut ppgcm = Vec::with_capacity(by_adr.len());
    let mut entries = Vec::with_capacity(locals.len());
    for group in by_adr.values() {
        let g = pre_aggregate(group, cfg.size_weighted)?;
        for lb in group {
            entries.push(TableDistance {
                client_id: lb.client_id,
                adr_id: lb.adr_id,
                table_size: lb.train_size,
                distance: distance(lb, &g)?,
                final_loss: lb.final_loss,
                exempt: group.len() < 2,
                flagged: false,
            });
        }
        ppgcm.push(g);
    }
    entries.sort_by_key(TableDistance::key);
    let mut degenerate: Vec<TableKey> = locals
        .iter()
        .filter(|c| c.degenerate)
        .map(LocalClassifier::key)
        .collect();
    degenerate.sort();
    Ok(DetectionReport {
        epsilon: cfg.epsilon,
        tables: entries,
        flagged: BTreeSet::new(),
        ppgcm_per_adr: ppgcm,
        degenerate,
    })
}

/// Applies `cfg`'s threshold to a measured report.
pub fn apply_threshold(report: &mut DetectionReport, cfg: &DetectionConfig) {
    report.epsilon = cfg.epsilon;
    report.flagged = flag_biased(&report.tables, cfg);
    for t in &mut report.tables {
        t.flagged = report.flagged.contains(&t.key());
    }
}

pub fn run_detection(
    split: &SplitDataset,
    cfg: &DetectionConfig,
) -> Result<(Dataset, DetectionReport), DetectError> {
    let mut report = measure(split, cfg)?;
    apply_threshold(&mut report, cfg);
    let clean = assemble_clean(split, &report.flagged)?;
    Ok((clean, report))
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::{prop_assert_eq, proptest};

    use super::*;
    use crate::domain::{AdverseEventRecord, Column, Quarter};

    fn record(id: usize, x: &[f64], severe: bool, adr: u16) -> AdverseEventRecord {
        let date = NaiveDate::from_ymd_opt(2021, 5, 1).unwrap();
        AdverseEventRecord {
            patient_id: id.to_string(),
            drug_code: "D000".into(),
            event_date: date,
            features: x.iter().map(|&v| Some(v)).collect(),
            raw_features: x.iter().map(|&v| Some(v)).collect(),
            adr_label: AdrId(adr),
            outcome_severe: severe,
            report_quarter: Quarter::of_date(date),
        }
    }

    fn table(client_id: usize, adr: u16, rows: Vec<AdverseEventRecord>) -> AdrTable {
        AdrTable {
            client_id,
            adr_id: AdrId(adr),
            records: rows,
        }
    }

    fn classifier(client_id: usize, adr: u16, params: Vec<f64>) -> LocalClassifier {
        LocalClassifier {
            client_id,
            adr_id: AdrId(adr),
            params,
            train_size: 10,
            final_loss: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn zero_epochs_gives_zero_params() {
        let t = table(
            1,
            0,
            vec![
                record(0, &[0.3, 0.7], true, 0),
                record(1, &[0.1, 0.2], false, 0),
            ],
        );
        let cfg = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        let lb = train_local(&t, &cfg).unwrap();
        assert_eq!(lb.params, vec![0.0; 3]);
        assert!((lb.final_loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn one_step_matches_hand_gradient() {
        let x = [0.4, 0.9];
        let lr = 0.03;
        for (severe, y) in [(true, 1.0), (false, 0.0)] {
            let t = table(1, 0, vec![record(0, &x, severe, 0)]);
            let cfg = TrainingConfig {
                learning_rate: lr,
                epochs: 1,
                seed: 0,
            };
            let lb = train_local(&t, &cfg).unwrap();
            let g = 0.5 - y;
            let expect = [-lr * g * x[0], -lr * g * x[1], -lr * g];
            for (a, e) in lb.params.iter().zip(expect) {
                assert!((a - e).abs() < 1e-15, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        // x in [-2, -1] labelled 0, x in [1, 2] labelled 1.
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let u = (i % 20) as f64 / 19.0;
                let pos = i >= 20;
                let x = if pos { 1.0 + u } else { -1.0 - u };
                record(i, &[x], pos, 0)
            })
            .collect();
        let t = table(1, 0, rows.clone());
        let cfg = TrainingConfig {
            learning_rate: 0.03,
            epochs: 500,
            seed: 0,
        };
        let lb = train_local(&t, &cfg).unwrap();
        let correct = rows
            .iter()
            .filter(|r| {
                let z = lb.params[0] * r.features[0].unwrap() + lb.params[1];
                (z > 0.0) == r.outcome_severe
            })
            .count();
        assert_eq!(correct, rows.len());
    }

    #[test]
    fn degenerate_table_still_trains() {
        let t = table(
            2,
            1,
            vec![record(0, &[0.5], true, 1), record(1, &[0.2], true, 1)],
        );
        let lb = train_local(&t, &TrainingConfig::default()).unwrap();
        assert!(lb.degenerate);
        assert!(lb.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn aggregate_examples() {
        let a = classifier(1, 0, vec![1.0, 3.0]);
        let b = classifier(2, 0, vec![3.0, 5.0]);
        let g = pre_aggregate(&[b.clone(), a.clone()], false).unwrap();
        assert_eq!(g.params, vec![2.0, 4.0]);
        assert_eq!(g.contributor_ids, vec![1, 2]);
        assert_eq!(
            pre_aggregate(std::slice::from_ref(&a), false)
                .unwrap()
                .params,
            a.params
        );
        let same = vec![
            a.clone(),
            classifier(2, 0, a.params.clone()),
            classifier(3, 0, a.params.clone()),
        ];
        assert_eq!(pre_aggregate(&same, false).unwrap().params, a.params);
        assert!(matches!(
            pre_aggregate(&[a.clone(), classifier(2, 1, vec![0.0, 0.0])], false),
            Err(DetectError::MixedAdr)
        ));
        assert!(matches!(
            pre_aggregate(&[a, classifier(2, 0, vec![0.0])], false),
            Err(DetectError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn size_weighted_mean() {
        let mut a = classifier(1, 0, vec![0.0]);
        let mut b = classifier(2, 0, vec![4.0]);
        a.train_size = 3;
        b.train_size = 1;
        assert_eq!(pre_aggregate(&[a, b], true).unwrap().params, vec![1.0]);
    }

    #[test]
    fn distance_examples() {
        let lb = classifier(1, 0, vec![0.0, 0.0]);
        let g = AggregatedClassifier {
            adr_id: AdrId(0),
            params: vec![3.0, 4.0],
            contributor_ids: vec![1],
        };
        assert_eq!(distance(&lb, &g).unwrap(), 5.0);
        let same = AggregatedClassifier {
            params: vec![0.0, 0.0],
            ..g.clone()
        };
        assert_eq!(distance(&lb, &same).unwrap(), 0.0);
    }

    fn entry(client_id: usize, adr: u16, distance: f64) -> TableDistance {
        TableDistance {
            client_id,
            adr_id: AdrId(adr),
            table_size: 50,
            distance,
            final_loss: 0.0,
            exempt: false,
            flagged: false,
        }
    }

    #[test]
    fn flag_examples() {
        let cfg = DetectionConfig::default();
        assert!(flag_biased(&[entry(1, 1, 2.0), entry(2, 1, 3.9)], &cfg).is_empty());
        assert_eq!(
            flag_biased(&[entry(1, 1, 2.0), entry(2, 1, 5.0)], &cfg),
            BTreeSet::from([TableKey::new(2, AdrId(1))])
        );
        assert_eq!(flag_biased(&[entry(1, 1, 4.0)], &cfg).len(), 1);
        let mut small = entry(1, 1, 9.0);
        small.table_size = 4;
        let mut lone = entry(2, 2, 9.0);
        lone.exempt = true;
        assert!(flag_biased(&[small, lone], &cfg).is_empty());
    }

    fn grid_split() -> SplitDataset {
        let mut id = 0;
        let subdatasets = (1..=3)
            .map(|c| {
                (0..3)
                    .map(|a| {
                        let rows = (0..4)
                            .map(|k| {
                                id += 1;
                                record(id, &[k as f64 / 4.0], k % 2 == 0, a)
                            })
                            .collect();
                        table(c, a, rows)
                    })
                    .collect()
            })
            .collect();
        SplitDataset {
            subdatasets,
            n: 3,
            m: 3,
            schema: FeatureSchema::new(vec![Column::numeric("age", 0.0, 1.0, true)]),
            adr_universe: vec!["cough".into(), "headache".into(), "rash".into()],
        }
    }

    #[test]
    fn clean_assembly() {
        let split = grid_split();
        let all = assemble_clean(&split, &BTreeSet::new()).unwrap();
        assert_eq!(all.records, split.flatten(Provenance::Clean).records);

        let headache = TableKey::new(1, AdrId(1));
        let clean = assemble_clean(&split, &BTreeSet::from([headache])).unwrap();
        let dropped: BTreeSet<_> = split
            .table(headache)
            .unwrap()
            .records
            .iter()
            .map(|r| r.key())
            .collect();
        let mut expect: Vec<_> = all
            .records
            .iter()
            .filter(|r| !dropped.contains(&r.key()))
            .map(|r| r.key())
            .collect();
        let mut got: Vec<_> = clean.records.iter().map(|r| r.key()).collect();
        expect.sort();
        got.sort();
        assert_eq!(got, expect);

        let everything = split.table_keys();
        assert!(matches!(
            assemble_clean(&split, &everything),
            Err(DetectError::AllTablesFlagged)
        ));
    }

    #[test]
    fn run_detection_is_deterministic_and_conserving() {
        let split = grid_split();
        let cfg = DetectionConfig {
            epsilon: 0.05,
            min_table_size: 1,
            ..Default::default()
        };
        let (clean_a, rep_a) = run_detection(&split, &cfg).unwrap();
        let (clean_b, rep_b) = run_detection(&split, &cfg).unwrap();
        assert_eq!(rep_a, rep_b);
        assert_eq!(clean_a, clean_b);
        let flagged: usize = rep_a
            .flagged
            .iter()
            .map(|k| split.table(*k).unwrap().len())
            .sum();
        assert_eq!(clean_a.len() + flagged, split.record_count());
        assert!(rep_a
            .tables
            .iter()
            .all(|t| t.flagged == (t.distance >= cfg.epsilon)));
    }

    #[test]
    fn ppgcm_csv_has_one_row_per_adr() {
        let split = grid_split();
        let (_, rep) = run_detection(&split, &DetectionConfig::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_ppgcm_csv(&split.schema, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "adr_id,contributors,w:age,bias");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1 2 3,"));
    }

    proptest! {
        #[test]
        fn aggregation_ignores_input_order(
            params in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..6),
            rotate in 0usize..6,
        ) {
            let cs: Vec<_> = params.iter().enumerate().map(|(i, p)| classifier(i + 1, 0, p.clone())).collect();
            let mut shuffled = cs.clone();
            let r = rotate % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let a = pre_aggregate(&cs, false).unwrap();
            let b = pre_aggregate(&shuffled, false).unwrap();
            prop_assert_eq!(a.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn flagging_is_monotone_in_epsilon(
            ds in proptest::collection::vec(0.0f64..10.0, 1..20),
            e1 in 0.01f64..10.0,
            e2 in 0.01f64..10.0,
        ) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let entries: Vec<_> = ds.iter().enumerate().map(|(i, &d)| entry(i + 1, 0, d)).collect();
            let at = |epsilon| flag_biased(&entries, &DetectionConfig { epsilon, ..Default::default() });
            prop_assert_eq!(at(hi).is_subset(&at(lo)), true);
        }

        #[test]
        fn distance_is_symmetric(a in proptest::collection::vec(-1e3f64..1e3, 5), b in proptest::collection::vec(-1e3f64..1e3, 5)) {
            prop_assert_eq!(l2(&a, &b).unwrap(), l2(&b, &a).unwrap());
        }
    }
}
