//! Shared data model: records, schemas, datasets and the split layout.

mod io;
mod rng;
mod schema;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use io::{
    read_csv, read_dataset, sidecar_path, write_csv, write_csv_bytes, write_dataset,
    DatasetIoError, Sidecar, RESERVED_COLUMNS,
};
pub use rng::{table_stream, Rng};
pub use schema::{Column, ColumnKind, FeatureSchema, SourceField, SourceTable, Transform};
pub use validate::{validate_dataset, Violation};

/// Dense ADR identifier, `0..m`. Human-readable names live in the dataset's
/// `adr_universe`, indexed by this id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdrId(pub u16);

impl AdrId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AdrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Calendar quarter of a report, written `2019Q3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: u16,
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: u16, quarter: u8) -> Self {
        assert!((1..=4).contains(&quarter), "quarter must be 1..=4");
        Self { year, quarter }
    }

    pub fn of_date(date: NaiveDate) -> Self {
        Self::new(date.year() as u16, (date.month0() / 3 + 1) as u8)
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year as i32, (self.quarter as u32 - 1) * 3 + 1, 1)
            .expect("valid quarter start")
    }

    /// Two-digit year form used in FAERS file names, e.g. `19Q3`.
    pub fn file_tag(self) -> String {
        format!("{:02}Q{}", self.year % 100, self.quarter)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid quarter `{0}` (expected e.g. 2019Q3 or 19Q3)")]
pub struct ParseQuarterError(pub String);

impl FromStr for Quarter {
    type Err = ParseQuarterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseQuarterError(s.to_string());
        let (y, q) = s.split_once(['Q', 'q']).ok_or_else(err)?;
        let q: u8 = q.parse().map_err(|_| err())?;
        if !(1..=4).contains(&q) {
            return Err(err());
        }
        let year: u16 = match y.len() {
            2 => 2000 + y.parse::<u16>().map_err(|_| err())?,
            4 => y.parse().map_err(|_| err())?,
            _ => return Err(err()),
        };
        Ok(Quarter::new(year, q))
    }
}

/// One adverse-event report for one reaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdverseEventRecord {
    pub patient_id: String,
    pub drug_code: String,
    pub event_date: NaiveDate,
    /// Model-facing values, one per schema column. Before normalization these
    /// mirror `raw_features`; afterwards they are scaled into `[0, 1]`.
    pub features: Vec<Option<f64>>,
    /// Values in schema units, as ingested.
    pub raw_features: Vec<Option<f64>>,
    pub adr_label: AdrId,
    pub outcome_severe: bool,
    pub report_quarter: Quarter,
}

impl AdverseEventRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            patient_id: self.patient_id.clone(),
            drug_code: self.drug_code.clone(),
            event_date: self.event_date,
        }
    }

    /// Dense feature vector. Missing values become `0.0`; callers that need
    /// completeness check [`Self::is_complete`] first.
    pub fn feature_vector(&self) -> Vec<f64> {
        self.features.iter().map(|v| v.unwrap_or(0.0)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.features.iter().all(Option::is_some)
    }
}

/// Identity of a record: the key triple used for de-duplication. Unique in
/// any dataset that has been through cleaning.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub patient_id: String,
    pub drug_code: String,
    pub event_date: NaiveDate,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}",
            self.patient_id, self.drug_code, self.event_date
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    Washed,
    Preprocessed,
    SplitMember,
    Clean,
}

impl Provenance {
    /// Stages whose features are expected to be normalized and complete.
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            Provenance::Preprocessed | Provenance::SplitMember | Provenance::Clean
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<AdverseEventRecord>,
    pub schema: FeatureSchema,
    /// ADR names indexed by [`AdrId`].
    pub adr_universe: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, adr_universe: Vec<String>, provenance: Provenance) -> Self {
        Self {
            records: Vec::new(),
            schema,
            adr_universe,
            provenance,
        }
    }

    /// Same schema, universe and provenance; different records.
    pub fn with_records(&self, records: Vec<AdverseEventRecord>) -> Self {
        Self {
            records,
            schema: self.schema.clone(),
            adr_universe: self.adr_universe.clone(),
            provenance: self.provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn adr_count(&self) -> usize {
        self.adr_universe.len()
    }

    pub fn adr_name(&self, id: AdrId) -> Option<&str> {
        self.adr_universe.get(id.index()).map(String::as_str)
    }

    pub fn adr_id(&self, name: &str) -> Option<AdrId> {
        self.adr_universe
            .iter()
            .position(|n| n == name)
            .map(|i| AdrId(i as u16))
    }

    /// Distinct drug codes in first-appearance order.
    pub fn drug_codes(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.drug_code.as_str()) {
                out.push(r.drug_code.clone());
            }
        }
        out
    }
}

/// All records of one ADR on one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrTable {
    pub client_id: usize,
    pub adr_id: AdrId,
    pub records: Vec<AdverseEventRecord>,
}

impl AdrTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn key(&self) -> TableKey {
        TableKey {
            client_id: self.client_id,
            adr_id: self.adr_id,
        }
    }
}

/// `(client_id, adr_id)`; clients are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableKey {
    pub client_id: usize,
    pub adr_id: AdrId,
}

impl TableKey {
    pub fn new(client_id: usize, adr_id: AdrId) -> Self {
        Self { client_id, adr_id }
    }
}

impl fmt::Display for TableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(client {}, adr {})", self.client_id, self.adr_id)
    }
}

/// A preprocessed dataset dealt across `n` simulated clients, each client's
/// share grouped into per-ADR tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// `subdatasets[i - 1]` holds client `i`'s tables in ascending ADR order.
    pub subdatasets: Vec<Vec<AdrTable>>,
    pub n: usize,
    pub m: usize,
    pub schema: FeatureSchema,
    pub adr_universe: Vec<String>,
}

impl SplitDataset {
    pub fn tables(&self) -> impl Iterator<Item = &AdrTable> {
        self.subdatasets.iter().flatten()
    }

    pub fn table(&self, key: TableKey) -> Option<&AdrTable> {
        self.subdatasets
            .get(key.client_id.checked_sub(1)?)?
            .iter()
            .find(|t| t.adr_id == key.adr_id)
    }

    pub fn table_keys(&self) -> BTreeSet<TableKey> {
        self.tables().map(AdrTable::key).collect()
    }

    pub fn record_count(&self) -> usize {
        self.tables().map(AdrTable::len).sum()
    }

    /// Concatenation in client, ADR, record order.
    pub fn flatten(&self, provenance: Provenance) -> Dataset {
        Dataset {
            records: self
                .tables()
                .flat_map(|t| t.records.iter().cloned())
                .collect(),
            schema: self.schema.clone(),
            adr_universe: self.adr_universe.clone(),
            provenance,
        }
    }
}

/// Ground truth for synthetic corpora: which tables and records were biased.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasAnnotation {
    pub biased_tables: BTreeSet<TableKey>,
    pub biased_record_ids: BTreeSet<RecordKey>,
}

impl BiasAnnotation {
    pub fn is_empty(&self) -> bool {
        self.biased_tables.is_empty() && self.biased_record_ids.is_empty()
    }

    pub fn merge(&mut self, other: BiasAnnotation) {
        self.biased_tables.extend(other.biased_tables);
        self.biased_record_ids.extend(other.biased_record_ids);
    }
}
