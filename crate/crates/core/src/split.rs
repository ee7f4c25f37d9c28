//! Preprocessing and client split: cleaning, min-max normalization, feature
//! deletion, and a uniform deal of records across clients into per-ADR
//! tables.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{
    read_csv, write_csv, AdrId, AdrTable, AdverseEventRecord, ColumnKind, Dataset, DatasetIoError,
    FeatureSchema, Provenance, Rng, Sidecar, SplitDataset,
};

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("every record was removed by feature deletion")]
    AllRecordsRemoved,
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("client count must be at least 1")]
    NoClients,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error("split manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub duplicates_removed: usize,
    pub out_of_bounds_removed: usize,
    pub null_significant_removed: usize,
    /// Records with an out-of-bounds value, per column. A record outside
    /// several bounds counts once per column.
    pub bound_hits: BTreeMap<String, usize>,
}

impl CleaningReport {
    pub fn total_removed(&self) -> usize {
        self.duplicates_removed + self.out_of_bounds_removed + self.null_significant_removed
    }
}

/// Drops repeated `(drug_code, patient_id, event_date)` keys, keeping the
/// first occurrence, then drops records with a numeric value outside its
/// column bounds.
pub fn clean(d: &Dataset) -> (Dataset, CleaningReport) {
    let mut report = CleaningReport::default();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(d.len());
    for r in &d.records {
        if !seen.insert((r.drug_code.as_str(), r.patient_id.as_str(), r.event_date)) {
            report.duplicates_removed += 1;
            continue;
        }
        let mut ok = true;
        for (col, v) in d.schema.columns.iter().zip(&r.raw_features) {
            if let (ColumnKind::Numeric, Some(x)) = (col.kind, v) {
                if !col.in_bounds(*x) {
                    ok = false;
                    *report.bound_hits.entry(col.name.clone()).or_default() += 1;
                }
            }
        }
        if ok {
            records.push(r.clone());
        } else {
            report.out_of_bounds_removed += 1;
        }
    }
    let mut out = d.with_records(records);
    out.provenance = Provenance::Washed;
    (out, report)
}

/// Per-column min-max scaling of `raw_features` into `features`. Constant
/// columns map to 0; missing values stay missing.
pub fn normalize(d: &Dataset) -> Dataset {
    let width = d.schema.len();
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for r in &d.records {
        for (k, v) in r.raw_features.iter().enumerate() {
            if let Some(x) = *v {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
    }
    let records = d
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.features = r
                .raw_features
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    v.map(|x| {
                        let span = hi[k] - lo[k];
                        if span > 0.0 {
                            ((x - lo[k]) / span).clamp(0.0, 1.0)
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            r
        })
        .collect();
    d.with_records(records)
}

/// Removes insignificant columns, then any record missing a value in a
/// remaining column.
pub fn feature_delete(d: &Dataset) -> Result<Dataset, SplitError> {
    let keep: Vec<usize> = d
        .schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.significant)
        .map(|(i, _)| i)
        .collect();
    let schema = FeatureSchema::new(keep.iter().map(|&i| d.schema.columns[i].clone()).collect());
    let pick = |v: &[Option<f64>]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let records: Vec<AdverseEventRecord> = d
        .records
        .iter()
        .filter_map(|r| {
            let features = pick(&r.features);
            if features.iter().any(Option::is_none) {
                return None;
            }
            Some(AdverseEventRecord {
                features,
                raw_features: pick(&r.raw_features),
                ..r.clone()
            })
        })
        .collect();
    if records.is_empty() {
        return Err(SplitError::AllRecordsRemoved);
    }
    Ok(Dataset {
        records,
        schema,
        adr_universe: d.adr_universe.clone(),
        provenance: Provenance::Preprocessed,
    })
}

/// `clean`, `normalize` and `feature_delete` in sequence, with the null
/// removals folded into the report.
pub fn preprocess(d: &Dataset) -> Result<(Dataset, CleaningReport), SplitError> {
    let (washed, mut report) = clean(d);
    let normalized = normalize(&washed);
    let pre = feature_delete(&normalized)?;
    report.null_significant_removed = normalized.len() - pre.len();
    Ok((pre, report))
}

/// Record indices per client: a seeded shuffle of `0..len` dealt round-robin,
/// so client sizes differ by at most one. `out[i]` belongs to client `i + 1`.
pub fn deal(len: usize, n: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let mut out = vec![Vec::with_capacity(len / n.max(1) + 1); n];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % n].push(idx);
    }
    out
}

/// Per-client tables as `(adr, record indices)` in ascending ADR order, with
/// deal order preserved inside each table.
pub fn table_indices(d: &Dataset, n: usize, rng: &mut Rng) -> Vec<Vec<(AdrId, Vec<usize>)>> {
    deal(d.len(), n, rng)
        .into_iter()
        .map(|client| {
            let mut by_adr: BTreeMap<AdrId, Vec<usize>> = BTreeMap::new();
            for idx in client {
                by_adr
                    .entry(d.records[idx].adr_label)
                    .or_default()
                    .push(idx);
            }
            by_adr.into_iter().collect()
        })
        .collect()
}

pub fn split_uniform(d: &Dataset, n: usize, rng: &mut Rng) -> Result<SplitDataset, SplitError> {
    if n == 0 {
        return Err(SplitError::NoClients);
    }
    if d.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let subdatasets = table_indices(d, n, rng)
        .into_iter()
        .enumerate()
        .map(|(i, tables)| {
            tables
                .into_iter()
                .map(|(adr_id, idx)| AdrTable {
                    client_id: i + 1,
                    adr_id,
                    records: idx.into_iter().map(|k| d.records[k].clone()).collect(),
                })
                .collect()
        })
        .collect();
    Ok(SplitDataset {
        subdatasets,
        n,
        m: d.adr_count(),
        schema: d.schema.clone(),
        adr_universe: d.adr_universe.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    n: usize,
    m: usize,
    adr_universe: Vec<String>,
    schema: FeatureSchema,
    /// `(client_id, adr_id)` of every table file, in split order.
    tables: Vec<(usize, AdrId)>,
}

pub fn table_path(dir: &Path, client_id: usize, adr: AdrId) -> PathBuf {
    dir.join(format!("client{client_id}"))
        .join(format!("adr{}.csv", adr.0))
}

/// Writes `client{i}/adr{j}.csv` per table plus a `split.json` manifest.
pub fn write_split(split: &SplitDataset, dir: &Path) -> Result<(), SplitError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SplitError::Io { path, source }
    };
    for t in split.tables() {
        let path = table_path(dir, t.client_id, t.adr_id);
        let parent = path.parent().expect("table path has a parent");
        fs::create_dir_all(parent).map_err(io(parent))?;
        let d = Dataset {
            records: t.records.clone(),
            schema: split.schema.clone(),
            adr_universe: split.adr_universe.clone(),
            provenance: Provenance::SplitMember,
        };
        let mut buf = Vec::new();
        write_csv(&d, &mut buf)?;
        fs::write(&path, buf).map_err(io(&path))?;
    }
    let manifest = SplitManifest {
        n: split.n,
        m: split.m,
        adr_universe: split.adr_universe.clone(),
        schema: split.schema.clone(),
        tables: split.tables().map(|t| (t.client_id, t.adr_id)).collect(),
    };
    let path = dir.join("split.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(io(&path))?;
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<SplitDataset, SplitError> {
    let path = dir.join("split.json");
    let bytes = fs::read(&path).map_err(|source| SplitError::Io { path, source })?;
    let manifest: SplitManifest = serde_json::from_slice(&bytes)?;
    let mut subdatasets: Vec<Vec<AdrTable>> = vec![Vec::new(); manifest.n];
    for &(client_id, adr_id) in &manifest.tables {
        let path = table_path(dir, client_id, adr_id);
        let file = fs::File::open(&path).map_err(|source| SplitError::Io {
            path: path.clone(),
            source,
        })?;
        let sidecar = Sidecar {
            provenance: Provenance::SplitMember,
            adr_universe: manifest.adr_universe.clone(),
            schema: manifest.schema.clone(),
        };
        let d = read_csv(std::io::BufReader::new(file), sidecar)?;
        subdatasets[client_id - 1].push(AdrTable {
            client_id,
            adr_id,
            records: d.records,
        });
    }
    Ok(SplitDataset {
        subdatasets,
        n: manifest.n,
        m: manifest.m,
        schema: manifest.schema,
        adr_universe: manifest.adr_universe,
    })
}
