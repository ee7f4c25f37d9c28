//! Federated biased-table detection and ADR signal prediction for
//! spontaneous adverse-event reports.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`]: parse `$`-delimited FAERS-style quarters, or generate a
//!    seeded synthetic corpus with known injected bias.
//! 2. [`split`]: clean, normalize, drop insignificant features and deal the
//!    records across simulated clients as per-ADR tables.
//! 3. [`detect`]: train one logistic classifier per table, average them per
//!    ADR, and flag tables whose classifier sits far from the average.
//! 4. [`signal`]: reporting odds ratio and proportional reporting ratio on the
//!    original and the cleaned data.
//! 5. [`predictor`]: an attention / convolution / BiLSTM / dense network
//!    trained on the cleaned data, scored with [`metrics`].

pub mod detect;
pub mod domain;
pub mod ingest;
pub mod metrics;
pub mod predictor;
pub mod signal;
pub mod split;

pub use domain::{
    AdrId, AdrTable, AdverseEventRecord, BiasAnnotation, Dataset, FeatureSchema, Provenance,
    Quarter, RecordKey, Rng, SplitDataset, TableKey,
};
