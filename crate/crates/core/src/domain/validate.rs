use std::collections::HashSet;
use std::fmt;

use super::{ColumnKind, Dataset};

/// One broken invariant. Validation reports these as data; it never fails.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyBounds {
        column: String,
    },
    NoSignificantColumn,
    DuplicateColumn {
        column: String,
    },
    FeatureLength {
        record: usize,
        expected: usize,
        found: usize,
    },
    RawFeatureLength {
        record: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        record: usize,
        column: String,
    },
    OutOfRange {
        record: usize,
        column: String,
        value: f64,
    },
    MissingFeature {
        record: usize,
        column: String,
    },
    LabelOutsideUniverse {
        record: usize,
        label: u16,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyBounds { column } => {
                write!(f, "column `{column}` has lower bound >= upper bound")
            }
            Violation::NoSignificantColumn => write!(f, "schema has no significant column"),
            Violation::DuplicateColumn { column } => write!(f, "column `{column}` appears twice"),
            Violation::FeatureLength {
                record,
                expected,
                found,
            } => write!(
                f,
                "record {record}: {found} features, schema has {expected} columns"
            ),
            Violation::RawFeatureLength {
                record,
                expected,
                found,
            } => write!(
                f,
                "record {record}: {found} raw features, schema has {expected} columns"
            ),
            Violation::NonFinite { record, column } => {
                write!(f, "record {record}: non-finite value in `{column}`")
            }
            Violation::OutOfRange {
                record,
                column,
                value,
            } => {
                write!(f, "record {record}: `{column}` = {value} outside [0, 1]")
            }
            Violation::MissingFeature { record, column } => {
                write!(f, "record {record}: `{column}` missing after preprocessing")
            }
            Violation::LabelOutsideUniverse { record, label } => {
                write!(f, "record {record}: ADR label {label} not in the universe")
            }
        }
    }
}

pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let schema = &d.schema;

    let mut names = HashSet::new();
    for c in &schema.columns {
        if !names.insert(c.name.as_str()) {
            out.push(Violation::DuplicateColumn {
                column: c.name.clone(),
            });
        }
        if c.kind == ColumnKind::Numeric && !(c.lower_bound < c.upper_bound) {
            out.push(Violation::EmptyBounds {
                column: c.name.clone(),
            });
        }
    }
    if schema.significant_count() == 0 {
        out.push(Violation::NoSignificantColumn);
    }

    let width = schema.len();
    let normalized = d.provenance.is_normalized();
    for (i, r) in d.records.iter().enumerate() {
        if r.features.len() != width {
            out.push(Violation::FeatureLength {
                record: i,
                expected: width,
                found: r.features.len(),
            });
        }
        if r.raw_features.len() != width {
            out.push(Violation::RawFeatureLength {
                record: i,
                expected: width,
                found: r.raw_features.len(),
            });
        }
        for (col, v) in schema.columns.iter().zip(&r.features) {
            match *v {
                Some(x) if !x.is_finite() => out.push(Violation::NonFinite {
                    record: i,
                    column: col.name.clone(),
                }),
                Some(x) if normalized && !(0.0..=1.0).contains(&x) => {
                    out.push(Violation::OutOfRange {
                        record: i,
                        column: col.name.clone(),
                        value: x,
                    })
                }
                None if normalized => out.push(Violation::MissingFeature {
                    record: i,
                    column: col.name.clone(),
                }),
                _ => {}
            }
        }
        if r.adr_label.index() >= d.adr_universe.len() {
            out.push(Violation::LabelOutsideUniverse {
                record: i,
                label: r.adr_label.0,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::domain::{AdrId, AdverseEventRecord, Column, FeatureSchema, Provenance, Quarter};

    fn fixture(provenance: Provenance) -> Dataset {
        let schema = FeatureSchema::new(vec![
            Column::numeric("age", 0.0, 120.0, true),
            Column::numeric("weight", 0.5, 300.0, false),
        ]);
        let date = NaiveDate::from_ymd_opt(2020, 1, 5).unwrap();
        let rec = |id: &str, f: [f64; 2], label: u16| AdverseEventRecord {
            patient_id: id.into(),
            drug_code: "D1".into(),
            event_date: date,
            features: f.iter().map(|&x| Some(x)).collect(),
            raw_features: f.iter().map(|&x| Some(x)).collect(),
            adr_label: AdrId(label),
            outcome_severe: false,
            report_quarter: Quarter::of_date(date),
        };
        Dataset {
            records: vec![
                rec("a", [0.1, 0.2], 0),
                rec("b", [0.5, 1.0], 1),
                rec("c", [0.0, 0.7], 0),
            ],
            schema,
            adr_universe: vec!["headache".into(), "rash".into()],
            provenance,
        }
    }

    #[test]
    fn well_formed_dataset_is_valid() {
        assert!(validate_dataset(&fixture(Provenance::Preprocessed)).is_empty());
    }

    #[test]
    fn out_of_range_feature_reported() {
        let mut d = fixture(Provenance::Preprocessed);
        d.records[1].features[0] = Some(1.5);
        let v = validate_dataset(&d);
        assert_eq!(
            v,
            vec![Violation::OutOfRange {
                record: 1,
                column: "age".into(),
                value: 1.5
            }]
        );
        // Raw-stage datasets carry schema units, so the range rule does not apply.
        d.provenance = Provenance::Original;
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn universe_must_cover_labels() {
        let mut d = fixture(Provenance::Preprocessed);
        d.adr_universe.pop();
        let v = validate_dataset(&d);
        assert_eq!(
            v,
            vec![Violation::LabelOutsideUniverse {
                record: 1,
                label: 1
            }]
        );
    }

    #[test]
    fn schema_violations() {
        let mut d = fixture(Provenance::Original);
        d.schema.columns[0].lower_bound = 200.0;
        d.schema.columns[0].significant = false;
        let v = validate_dataset(&d);
        assert!(v.contains(&Violation::EmptyBounds {
            column: "age".into()
        }));
        assert!(v.contains(&Violation::NoSignificantColumn));
    }
}
