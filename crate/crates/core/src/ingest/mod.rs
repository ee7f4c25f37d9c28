//! FAERS quarterly file parsing, dataset assembly, synthetic corpora and
//! bias injection.

mod assemble;
mod bias;
mod faers;
mod synth;

use std::path::PathBuf;

pub use assemble::{assemble_dataset, parse_faers_date, SEVERE_OUTCOMES};
pub use bias::{
    inject_bias, inject_bias_split, BiasMode, BiasSpec, SplitPlan, TableTarget, TargetSelector,
};
pub use faers::{parse_quarter, write_quarter, FaersFile, RawQuarter, RawTable, DELIMITER};
pub use synth::{
    adr_names, drug_code, generate_synthetic, generate_with, signal_drug, SyntheticConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing input file {path}")]
    MissingFile { path: PathBuf },
    #[error("{file}:{line_no}: expected {expected} fields, found {found}")]
    RaggedRow {
        file: String,
        line_no: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}: invalid UTF-8 at byte {byte_offset}")]
    NonUtf8Input { file: String, byte_offset: usize },
    #[error("{file}:{line_no}: primaryid {primaryid} has no DEMO row")]
    OrphanRow {
        file: String,
        line_no: usize,
        primaryid: String,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("schema column `{column}`: {reason}")]
    SchemaMismatch { column: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bias target resolves to no tables")]
    EmptyTarget,
    #[error("bias column `{0}` is not a numeric schema column")]
    UnknownColumn(String),
    #[error("bias intensity {0} outside [0, 1]")]
    InvalidIntensity(f64),
}
