//! Ground-truth bias injection into the tables a split will produce.
//!
//! Targets are named in split coordinates `(client_id, adr_id)`. For a plain
//! dataset the split is replayed from [`SplitPlan`] to find which records
//! land in which table; [`inject_bias_split`] works on an existing split
//! directly, so the biased records stay where they were dealt.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::domain::{
    table_stream, AdrId, AdverseEventRecord, BiasAnnotation, ColumnKind, Dataset, FeatureSchema,
    Rng, SplitDataset, TableKey,
};
use crate::split::table_indices;

/// The split a dataset is destined for: client count and deal seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableTarget {
    pub client_id: usize,
    pub adr_id: AdrId,
    /// Restrict the bias to reports naming this drug.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drug_code: Option<String>,
}

impl TableTarget {
    pub fn new(client_id: usize, adr_id: AdrId) -> Self {
        Self {
            client_id,
            adr_id,
            drug_code: None,
        }
    }

    pub fn with_drug(mut self, drug: impl Into<String>) -> Self {
        self.drug_code = Some(drug.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSelector {
    Tables {
        tables: Vec<TableTarget>,
    },
    /// Every table of the listed clients.
    Clients {
        clients: Vec<usize>,
    },
    /// A seeded random share of all non-empty tables, at least one.
    Fraction {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BiasMode {
    /// Invert `outcome_severe`.
    LabelFlip,
    /// Add `delta` to the named numeric columns. Normalized features are
    /// clamped to `[0, 1]`.
    FeatureShift { columns: Vec<String>, delta: f64 },
    /// Delete severe reports.
    UnderReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub target: TargetSelector,
    #[serde(flatten)]
    pub mode: BiasMode,
    /// Share of eligible records touched in each target table. Eligible means
    /// every record, or only severe ones for `UnderReport`, narrowed to the
    /// target's drug when one is given.
    pub intensity: f64,
    /// Upper bound on touched records per table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_records: Option<usize>,
    pub seed: u64,
}

impl BiasSpec {
    pub fn new(target: TargetSelector, mode: BiasMode, intensity: f64, seed: u64) -> Self {
        Self {
            target,
            mode,
            intensity,
            max_records: None,
            seed,
        }
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), IngestError> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(IngestError::InvalidIntensity(self.intensity));
        }
        if let TargetSelector::Fraction { fraction } = self.target {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(IngestError::InvalidIntensity(fraction));
            }
        }
        if let BiasMode::FeatureShift { columns, .. } = &self.mode {
            for c in columns {
                match schema.index_of(c) {
                    Some(i) if schema.columns[i].kind == ColumnKind::Numeric => {}
                    _ => return Err(IngestError::UnknownColumn(c.clone())),
                }
            }
        }
        Ok(())
    }

    /// Target tables among `available`, each with its optional drug filter.
    fn resolve(&self, available: &[TableKey]) -> Vec<(TableKey, Option<String>)> {
        match &self.target {
            TargetSelector::Tables { tables } => {
                let mut out: Vec<(TableKey, Option<String>)> = tables
                    .iter()
                    .map(|t| (TableKey::new(t.client_id, t.adr_id), t.drug_code.clone()))
                    .filter(|(k, _)| available.contains(k))
                    .collect();
                out.sort();
                out.dedup();
                out
            }
            TargetSelector::Clients { clients } => available
                .iter()
                .filter(|k| clients.contains(&k.client_id))
                .map(|&k| (k, None))
                .collect(),
            TargetSelector::Fraction { fraction } => {
                let count = ((fraction * available.len() as f64).round() as usize)
                    .clamp(1, available.len().max(1));
                let mut keys = available.to_vec();
                Rng::new(self.seed).shuffle(&mut keys);
                keys.truncate(count.min(available.len()));
                keys.sort();
                keys.into_iter().map(|k| (k, None)).collect()
            }
        }
    }
}

enum Touch {
    Changed,
    Deleted,
}

/// Picks the touched positions of one table: a seeded shuffle of the
/// eligible positions, truncated to `round(intensity * eligible)` and the
/// cap. Returned in ascending position order.
fn select(
    spec: &BiasSpec,
    key: TableKey,
    records: &[&AdverseEventRecord],
    drug: Option<&str>,
) -> Vec<usize> {
    let mut eligible: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| drug.is_none_or(|d| r.drug_code == d))
        .filter(|(_, r)| !matches!(spec.mode, BiasMode::UnderReport) || r.outcome_severe)
        .map(|(i, _)| i)
        .collect();
    let mut take = (spec.intensity * eligible.len() as f64).round() as usize;
    if let Some(cap) = spec.max_records {
        take = take.min(cap);
    }
    let mut rng = Rng::new(spec.seed).fork(table_stream(key.client_id, key.adr_id.0));
    rng.shuffle(&mut eligible);
    eligible.truncate(take);
    eligible.sort_unstable();
    eligible
}

fn apply(
    mode: &BiasMode,
    schema: &FeatureSchema,
    normalized: bool,
    r: &mut AdverseEventRecord,
) -> Touch {
    match mode {
        BiasMode::LabelFlip => {
            r.outcome_severe = !r.outcome_severe;
            Touch::Changed
        }
        BiasMode::FeatureShift { columns, delta } => {
            for c in columns {
                let k = schema.index_of(c).expect("columns validated");
                if normalized {
                    if let Some(v) = r.features[k].as_mut() {
                        *v = (*v + delta).clamp(0.0, 1.0);
                    }
                } else {
                    if let Some(v) = r.raw_features[k].as_mut() {
                        *v += delta;
                    }
                    if let Some(v) = r.features[k].as_mut() {
                        *v += delta;
                    }
                }
            }
            Touch::Changed
        }
        BiasMode::UnderReport => Touch::Deleted,
    }
}

/// Bias for the tables `d` will form under `plan`. Deleted records are
/// dropped; all other records keep their order.
pub fn inject_bias(
    d: &Dataset,
    plan: SplitPlan,
    spec: &BiasSpec,
) -> Result<(Dataset, BiasAnnotation), IngestError> {
    spec.validate(&d.schema)?;
    if spec.intensity == 0.0 {
        return Ok((d.clone(), BiasAnnotation::default()));
    }
    let layout = table_indices(d, plan.n.max(1), &mut Rng::new(plan.seed));
    let mut tables: Vec<(TableKey, &Vec<usize>)> = Vec::new();
    for (i, client) in layout.iter().enumerate() {
        for (adr, idx) in client {
            tables.push((TableKey::new(i + 1, *adr), idx));
        }
    }
    let keys: Vec<TableKey> = tables.iter().map(|(k, _)| *k).collect();
    let targets = spec.resolve(&keys);
    if targets.is_empty() {
        return Err(IngestError::EmptyTarget);
    }

    let normalized = d.provenance.is_normalized();
    let mut records = d.records.clone();
    let mut deleted = vec![false; records.len()];
    let mut ann = BiasAnnotation::default();
    for (key, drug) in &targets {
        let idx = tables
            .iter()
            .find(|(k, _)| k == key)
            .expect("resolved from keys")
            .1;
        let view: Vec<&AdverseEventRecord> = idx.iter().map(|&i| &d.records[i]).collect();
        let picked = select(spec, *key, &view, drug.as_deref());
        if picked.is_empty() {
            continue;
        }
        ann.biased_tables.insert(*key);
        for p in picked {
            let i = idx[p];
            ann.biased_record_ids.insert(records[i].key());
            if let Touch::Deleted = apply(&spec.mode, &d.schema, normalized, &mut records[i]) {
                deleted[i] = true;
            }
        }
    }
    let records = records
        .into_iter()
        .zip(deleted)
        .filter(|(_, del)| !del)
        .map(|(r, _)| r)
        .collect();
    Ok((d.with_records(records), ann))
}

/// Same selection as [`inject_bias`], applied in place to an existing split.
pub fn inject_bias_split(
    split: &SplitDataset,
    spec: &BiasSpec,
) -> Result<(SplitDataset, BiasAnnotation), IngestError> {
    spec.validate(&split.schema)?;
    if spec.intensity == 0.0 {
        return Ok((split.clone(), BiasAnnotation::default()));
    }
    let keys: Vec<TableKey> = split
        .tables()
        .filter(|t| !t.is_empty())
        .map(|t| t.key())
        .collect();
    let targets = spec.resolve(&keys);
    if targets.is_empty() {
        return Err(IngestError::EmptyTarget);
    }
    let mut out = split.clone();
    let mut ann = BiasAnnotation::default();
    for table in out.subdatasets.iter_mut().flatten() {
        let key = table.key();
        let drugs: BTreeSet<Option<&str>> = targets
            .iter()
            .filter(|(k, _)| *k == key)
            .map(|(_, d)| d.as_deref())
            .collect();
        for drug in drugs {
            let view: Vec<&AdverseEventRecord> = table.records.iter().collect();
            let picked = select(spec, key, &view, drug);
            if picked.is_empty() {
                continue;
            }
            ann.biased_tables.insert(key);
            let mut deleted = vec![false; table.records.len()];
            for p in picked {
                ann.biased_record_ids.insert(table.records[p].key());
                if let Touch::Deleted =
                    apply(&spec.mode, &split.schema, true, &mut table.records[p])
                {
                    deleted[p] = true;
                }
            }
            let mut flags = deleted.into_iter();
            table.records.retain(|_| !flags.next().unwrap_or(false));
        }
    }
    Ok((out, ann))
}
