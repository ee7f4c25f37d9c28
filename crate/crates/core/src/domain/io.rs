//! Canonical on-disk dataset format: a CSV of records plus a JSON sidecar
//! holding the schema, ADR universe and provenance.
//!
//! CSV layout: reserved columns
//! `patient_id,drug_code,event_date,adr_label,outcome_severe,quarter`, then
//! one column per schema column (normalized features), then one
//! `raw:<name>` column per schema column (values in schema units). Missing
//! values are empty fields; reals use the shortest representation that parses
//! back to the same `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AdrId, AdverseEventRecord, Dataset, FeatureSchema, Provenance, Quarter};

pub const RESERVED_COLUMNS: [&str; 6] = [
    "patient_id",
    "drug_code",
    "event_date",
    "adr_label",
    "outcome_severe",
    "quarter",
];

const RAW_PREFIX: &str = "raw:";

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("sidecar JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV header does not match the schema: {0}")]
    Header(String),
    #[error("line {line}, column `{column}`: {message}")]
    Field {
        line: u64,
        column: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub provenance: Provenance,
    pub adr_universe: Vec<String>,
    pub schema: FeatureSchema,
}

impl Sidecar {
    pub fn of(d: &Dataset) -> Self {
        Self {
            provenance: d.provenance,
            adr_universe: d.adr_universe.clone(),
            schema: d.schema.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetIoError + '_ {
    move |source| DatasetIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn header(schema: &FeatureSchema) -> Vec<String> {
    let mut h: Vec<String> = RESERVED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(schema.names().map(str::to_string));
    h.extend(schema.names().map(|n| format!("{RAW_PREFIX}{n}")));
    h
}

/// Writes the records as canonical CSV.
pub fn write_csv<W: Write>(d: &Dataset, w: W) -> Result<(), DatasetIoError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(header(&d.schema))?;
    let mut row: Vec<String> = Vec::with_capacity(6 + 2 * d.schema.len());
    for r in &d.records {
        row.clear();
        row.push(r.patient_id.clone());
        row.push(r.drug_code.clone());
        row.push(r.event_date.format("%Y-%m-%d").to_string());
        row.push(r.adr_label.0.to_string());
        row.push(if r.outcome_severe { "1" } else { "0" }.to_string());
        row.push(r.report_quarter.to_string());
        row.extend(r.features.iter().map(|v| fmt_opt(*v)));
        row.extend(r.raw_features.iter().map(|v| fmt_opt(*v)));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|source| DatasetIoError::Io {
        path: PathBuf::from("<csv writer>"),
        source,
    })?;
    Ok(())
}

/// Canonical CSV bytes, convenient for hashing and byte comparisons.
pub fn write_csv_bytes(d: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(d, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn read_csv<R: Read>(r: R, sidecar: Sidecar) -> Result<Dataset, DatasetIoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let expected = header(&sidecar.schema);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        let diff = expected
            .iter()
            .zip(found.iter().chain(std::iter::repeat(&String::new())))
            .find(|(e, f)| e != f)
            .map(|(e, f)| format!("expected `{e}`, found `{f}`"))
            .unwrap_or_else(|| {
                format!("expected {} columns, found {}", expected.len(), found.len())
            });
        return Err(DatasetIoError::Header(diff));
    }

    let width = sidecar.schema.len();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field_err = |column: &str, message: String| DatasetIoError::Field {
            line,
            column: column.to_string(),
            message,
        };
        let event_date = NaiveDate::parse_from_str(&row[2], "%Y-%m-%d")
            .map_err(|e| field_err("event_date", e.to_string()))?;
        let adr_label = row[3]
            .parse::<u16>()
            .map(AdrId)
            .map_err(|e| field_err("adr_label", e.to_string()))?;
        let outcome_severe = match &row[4] {
            "1" => true,
            "0" => false,
            other => {
                return Err(field_err(
                    "outcome_severe",
                    format!("expected 0 or 1, got `{other}`"),
                ))
            }
        };
        let report_quarter: Quarter = row[5]
            .parse()
            .map_err(|e: super::ParseQuarterError| field_err("quarter", e.to_string()))?;
        let parse_block = |offset: usize| -> Result<Vec<Option<f64>>, DatasetIoError> {
            (0..width)
                .map(|k| {
                    let s = &row[offset + k];
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>()
                            .map(Some)
                            .map_err(|e| field_err(&expected[offset + k], e.to_string()))
                    }
                })
                .collect()
        };
        records.push(AdverseEventRecord {
            patient_id: row[0].to_string(),
            drug_code: row[1].to_string(),
            event_date,
            features: parse_block(6)?,
            raw_features: parse_block(6 + width)?,
            adr_label,
            outcome_severe,
            report_quarter,
        });
    }
    Ok(Dataset {
        records,
        schema: sidecar.schema,
        adr_universe: sidecar.adr_universe,
        provenance: sidecar.provenance,
    })
}

/// Writes `path` (CSV) and its sidecar (same stem, `.json`).
pub fn write_dataset(d: &Dataset, path: &Path) -> Result<(), DatasetIoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut buf = Vec::new();
    write_csv(d, &mut buf)?;
    fs::write(path, buf).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&Sidecar::of(d))?;
    fs::write(&side, json).map_err(io_err(&side))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetIoError> {
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(&side).map_err(io_err(&side))?)?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_csv(std::io::BufReader::new(file), sidecar)
}
