//! Joins the four quarterly tables on `primaryid` into records.

use std::collections::{BTreeSet, HashMap};

use chrono::NaiveDate;

use super::faers::{primaryid_column, FaersFile, RawQuarter, RawTable};
use super::IngestError;
use crate::domain::{
    AdrId, AdverseEventRecord, ColumnKind, Dataset, FeatureSchema, Provenance, SourceTable,
    Transform,
};

/// Outcome codes that make a report serious: death, hospitalization,
/// life-threatening, disability.
pub const SEVERE_OUTCOMES: [&str; 4] = ["DE", "HO", "LT", "DS"];

/// Multiplier converting a FAERS unit code into schema units (years, kg).
fn unit_factor(code: &str) -> Option<f64> {
    match code.trim().to_ascii_uppercase().as_str() {
        "YR" | "KG" => Some(1.0),
        "DEC" => Some(10.0),
        "MON" => Some(1.0 / 12.0),
        "WK" => Some(1.0 / 52.0),
        "DY" => Some(1.0 / 365.25),
        "HR" => Some(1.0 / 8766.0),
        "LBS" | "LB" => Some(0.453_592_37),
        "GMS" | "G" => Some(0.001),
        _ => None,
    }
}

/// Parses `yyyymmdd`, `yyyymm` or `yyyy`. Partial dates take the first day.
pub fn parse_faers_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let year: i32 = s.get(0..4)?.parse().ok()?;
    let month: u32 = s.get(4..6).map(str::parse).transpose().ok()?.unwrap_or(1);
    let day: u32 = s.get(6..8).map(str::parse).transpose().ok()?.unwrap_or(1);
    NaiveDate::from_ymd_opt(year, month, day)
}

struct Resolved {
    table: SourceTable,
    col: usize,
    unit_col: Option<usize>,
    transform: Option<Transform>,
    category: Option<String>,
}

fn source_table<'a>(raw: &'a RawQuarter, t: SourceTable) -> (&'a RawTable, FaersFile) {
    match t {
        SourceTable::Demo => (&raw.demo, FaersFile::Demo),
        SourceTable::Drug => (&raw.drug, FaersFile::Drug),
    }
}

fn resolve(raw: &RawQuarter, schema: &FeatureSchema) -> Result<Vec<Resolved>, IngestError> {
    schema
        .columns
        .iter()
        .map(|c| {
            let src = c
                .source
                .as_ref()
                .ok_or_else(|| IngestError::SchemaMismatch {
                    column: c.name.clone(),
                    reason: "column has no source field".into(),
                })?;
            let (table, file) = source_table(raw, src.table);
            let col = table
                .column(&src.field)
                .ok_or_else(|| IngestError::SchemaMismatch {
                    column: c.name.clone(),
                    reason: format!("field `{}` not in {}", src.field, file.prefix()),
                })?;
            if c.kind == ColumnKind::CategoricalEncoded && src.category.is_none() {
                return Err(IngestError::SchemaMismatch {
                    column: c.name.clone(),
                    reason: "categorical column without a category value".into(),
                });
            }
            Ok(Resolved {
                table: src.table,
                col,
                unit_col: src.unit_field.as_deref().and_then(|u| table.column(u)),
                transform: src.transform,
                category: src.category.clone(),
            })
        })
        .collect()
}

fn extract(r: &Resolved, row: &[String]) -> Option<f64> {
    let field = row[r.col].trim();
    if field.is_empty() {
        return None;
    }
    if let Some(cat) = &r.category {
        return Some(if field.eq_ignore_ascii_case(cat) {
            1.0
        } else {
            0.0
        });
    }
    let text = match r.transform {
        Some(Transform::Year) => field.get(0..4)?,
        Some(Transform::Month) => field.get(4..6)?,
        None => field,
    };
    let value: f64 = text.parse().ok().filter(|v: &f64| v.is_finite())?;
    let factor = r.unit_col.and_then(|u| unit_factor(&row[u])).unwrap_or(1.0);
    Some(value * factor)
}

/// One record per `(primaryid, reaction)` pair, in DEMO order then REAC
/// order. The ADR universe is the sorted set of distinct reaction terms.
pub fn assemble_dataset(raw: &RawQuarter, schema: &FeatureSchema) -> Result<Dataset, IngestError> {
    let q = raw.quarter;
    let demo_id = primaryid_column(&raw.demo, &FaersFile::Demo.file_name(q))?;
    let drug_id = primaryid_column(&raw.drug, &FaersFile::Drug.file_name(q))?;
    let reac_id = primaryid_column(&raw.reac, &FaersFile::Reac.file_name(q))?;
    let outc_id = primaryid_column(&raw.outc, &FaersFile::Outc.file_name(q))?;
    let pt_col = raw
        .reac
        .column("pt")
        .ok_or_else(|| IngestError::MissingColumn {
            file: FaersFile::Reac.file_name(q),
            column: "pt".into(),
        })?;
    let outc_col = raw
        .outc
        .column("outc_cod")
        .ok_or_else(|| IngestError::MissingColumn {
            file: FaersFile::Outc.file_name(q),
            column: "outc_cod".into(),
        })?;
    let resolved = resolve(raw, schema)?;

    let universe: Vec<String> = raw
        .reac
        .rows
        .iter()
        .map(|r| r[pt_col].trim().to_string())
        .filter(|s| !s.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let adr_of: HashMap<&str, AdrId> = universe
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), AdrId(i as u16)))
        .collect();

    let mut reacs: HashMap<&str, Vec<&Vec<String>>> = HashMap::new();
    for r in &raw.reac.rows {
        reacs.entry(r[reac_id].as_str()).or_default().push(r);
    }
    // Primary-suspect drug if present, otherwise the first listed.
    let role_col = raw.drug.column("role_cod");
    let mut drugs: HashMap<&str, &Vec<String>> = HashMap::new();
    for r in &raw.drug.rows {
        let is_ps = role_col.is_some_and(|c| r[c].trim().eq_ignore_ascii_case("PS"));
        let e = drugs.entry(r[drug_id].as_str()).or_insert(r);
        if is_ps && !role_col.is_some_and(|c| e[c].trim().eq_ignore_ascii_case("PS")) {
            *e = r;
        }
    }
    let mut severe: HashMap<&str, bool> = HashMap::new();
    for r in &raw.outc.rows {
        let s = SEVERE_OUTCOMES
            .iter()
            .any(|c| r[outc_col].trim().eq_ignore_ascii_case(c));
        *severe.entry(r[outc_id].as_str()).or_insert(false) |= s;
    }

    let drug_name_cols: Vec<usize> = ["prod_ai", "drugname"]
        .iter()
        .filter_map(|c| raw.drug.column(c))
        .collect();
    let date_cols: Vec<usize> = ["event_dt", "rept_dt", "fda_dt"]
        .iter()
        .filter_map(|c| raw.demo.column(c))
        .collect();

    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for demo in &raw.demo.rows {
        let pid = demo[demo_id].as_str();
        if !seen.insert(pid) {
            continue;
        }
        let Some(reactions) = reacs.get(pid) else {
            continue;
        };
        let drug = drugs.get(pid).copied();
        let drug_code = drug
            .and_then(|d| {
                drug_name_cols
                    .iter()
                    .map(|&c| d[c].trim())
                    .find(|s| !s.is_empty())
            })
            .map(str::to_ascii_uppercase)
            .unwrap_or_default();
        let event_date = date_cols
            .iter()
            .find_map(|&c| parse_faers_date(&demo[c]))
            .unwrap_or_else(|| q.first_day());
        let raw_features: Vec<Option<f64>> = resolved
            .iter()
            .map(|r| match r.table {
                SourceTable::Demo => extract(r, demo),
                SourceTable::Drug => drug.and_then(|d| extract(r, d)),
            })
            .collect();
        let outcome_severe = severe.get(pid).copied().unwrap_or(false);
        for reac in reactions {
            let Some(&label) = adr_of.get(reac[pt_col].trim()) else {
                continue;
            };
            records.push(AdverseEventRecord {
                patient_id: pid.to_string(),
                drug_code: drug_code.clone(),
                event_date,
                features: raw_features.clone(),
                raw_features: raw_features.clone(),
                adr_label: label,
                outcome_severe,
                report_quarter: q,
            });
        }
    }

    Ok(Dataset {
        records,
        schema: schema.clone(),
        adr_universe: universe,
        provenance: Provenance::Original,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Column, Quarter, SourceField};

    fn table(text: &str) -> RawTable {
        RawTable::parse(text, "t").unwrap()
    }

    fn small_schema() -> FeatureSchema {
        let src = |t, f: &str| SourceField {
            table: t,
            field: f.into(),
            category: None,
            unit_field: None,
            transform: None,
        };
        let mut sex = src(SourceTable::Demo, "sex");
        sex.category = Some("F".into());
        let mut age = src(SourceTable::Demo, "age");
        age.unit_field = Some("age_cod".into());
        FeatureSchema::new(vec![
            Column::numeric("age", 0.0, 120.0, true).from_source(age),
            Column::categorical("gender_f", true).from_source(sex),
            Column::numeric("dose_amount", 0.0, 5000.0, true)
                .from_source(src(SourceTable::Drug, "dose_amt")),
        ])
    }

    fn quarter(demo: &str, reac: &str) -> RawQuarter {
        RawQuarter {
            quarter: Quarter::new(2019, 3),
            demo: table(demo),
            drug: table(
                "primaryid$drugname$role_cod$dose_amt\n100$aspirin$SS$10\n100$warfarin$PS$5\n",
            ),
            reac: table(reac),
            outc: table("primaryid$outc_cod\n100$OT\n100$HO\n"),
        }
    }

    #[test]
    fn one_record_per_reaction() {
        let raw = quarter(
            "primaryid$age$age_cod$sex$event_dt\n100$55$YR$F$20190704\n",
            "primaryid$pt\n100$Headache\n100$Rash\n",
        );
        let d = assemble_dataset(&raw, &small_schema()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.adr_universe, ["Headache", "Rash"]);
        for (r, label) in d.records.iter().zip([0u16, 1]) {
            assert_eq!(r.patient_id, "100");
            assert_eq!(r.drug_code, "WARFARIN");
            assert_eq!(r.raw_features, vec![Some(55.0), Some(1.0), Some(5.0)]);
            assert_eq!(r.adr_label, AdrId(label));
            assert!(r.outcome_severe);
            assert_eq!(r.event_date, NaiveDate::from_ymd_opt(2019, 7, 4).unwrap());
        }
        assert_eq!(d.provenance, Provenance::Original);
    }

    #[test]
    fn no_reactions_gives_empty_dataset() {
        let raw = quarter("primaryid$age$age_cod$sex\n100$55$YR$F\n", "primaryid$pt\n");
        let d = assemble_dataset(&raw, &small_schema()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn unparseable_numeric_becomes_missing() {
        let raw = quarter(
            "primaryid$age$age_cod$sex\n100$abc$YR$F\n",
            "primaryid$pt\n100$Rash\n",
        );
        let d = assemble_dataset(&raw, &small_schema()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.records[0].raw_features[0], None);
        assert_eq!(d.records[0].raw_features[1], Some(1.0));
    }

    #[test]
    fn age_units_converted() {
        let raw = quarter(
            "primaryid$age$age_cod$sex\n100$6$MON$M\n",
            "primaryid$pt\n100$Rash\n",
        );
        let d = assemble_dataset(&raw, &small_schema()).unwrap();
        assert_eq!(d.records[0].raw_features[0], Some(0.5));
        assert_eq!(d.records[0].raw_features[1], Some(0.0));
    }

    #[test]
    fn missing_source_field_is_schema_mismatch() {
        let raw = quarter(
            "primaryid$age$age_cod\n100$6$YR\n",
            "primaryid$pt\n100$Rash\n",
        );
        let err = assemble_dataset(&raw, &small_schema()).unwrap_err();
        assert!(
            matches!(err, IngestError::SchemaMismatch { ref column, .. } if column == "gender_f")
        );
    }

    #[test]
    fn partial_dates() {
        assert_eq!(
            parse_faers_date("201907"),
            NaiveDate::from_ymd_opt(2019, 7, 1)
        );
        assert_eq!(
            parse_faers_date("2019"),
            NaiveDate::from_ymd_opt(2019, 1, 1)
        );
        assert_eq!(parse_faers_date("2019x"), None);
        assert_eq!(parse_faers_date("20191340"), None);
    }
}
