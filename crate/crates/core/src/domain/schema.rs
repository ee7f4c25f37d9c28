use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    /// One indicator column of a one-hot encoded categorical field.
    CategoricalEncoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTable {
    Demo,
    Drug,
}

/// Derivations applied to a source field before numeric parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// Leading four digits of a `yyyymmdd` date.
    Year,
    /// Digits five and six of a `yyyymmdd` date.
    Month,
}

/// Where a column comes from in the FAERS-style quarterly files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceField {
    pub table: SourceTable,
    pub field: String,
    /// For one-hot columns: the field value (case-insensitive) that sets this
    /// indicator to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Companion unit-code field (`age_cod`, `wt_cod`) used to convert values
    /// into schema units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl SourceField {
    fn new(table: SourceTable, field: &str) -> Self {
        Self {
            table,
            field: field.to_string(),
            category: None,
            unit_field: None,
            transform: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceField>,
}

impl Column {
    pub fn numeric(name: &str, lower: f64, upper: f64, significant: bool) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
            lower_bound: lower,
            upper_bound: upper,
            significant,
            source: None,
        }
    }

    pub fn categorical(name: &str, significant: bool) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::CategoricalEncoded,
            lower_bound: 0.0,
            upper_bound: 1.0,
            significant,
            source: None,
        }
    }

    pub fn from_source(mut self, source: SourceField) -> Self {
        self.source = Some(source);
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }

    /// One-hot group this column belongs to: its source field, or its own
    /// name when it has no source.
    pub fn group(&self) -> &str {
        self.source
            .as_ref()
            .map(|s| s.field.as_str())
            .unwrap_or(self.name.as_str())
    }

    pub fn in_bounds(&self, v: f64) -> bool {
        v >= self.lower_bound && v <= self.upper_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn significant_count(&self) -> usize {
        self.columns.iter().filter(|c| c.significant).count()
    }

    /// The 38-column schema used for FAERS-style ingestion and for synthetic
    /// corpora. Thirty columns are significant; the remaining eight are
    /// dropped by feature deletion.
    pub fn default_faers() -> Self {
        use SourceTable::{Demo, Drug};

        let num = |name: &str, lo: f64, hi: f64, sig: bool, table: SourceTable, field: &str| {
            Column::numeric(name, lo, hi, sig).from_source(SourceField::new(table, field))
        };
        let cat = |name: &str, sig: bool, table: SourceTable, field: &str, value: &str| {
            let mut src = SourceField::new(table, field);
            src.category = Some(value.to_string());
            Column::categorical(name, sig).from_source(src)
        };
        let with_unit = |mut c: Column, unit: &str| {
            if let Some(s) = c.source.as_mut() {
                s.unit_field = Some(unit.to_string());
            }
            c
        };
        let with_transform = |mut c: Column, t: Transform| {
            if let Some(s) = c.source.as_mut() {
                s.transform = Some(t);
            }
            c
        };

        let columns = vec![
            with_unit(num("age", 0.0, 120.0, true, Demo, "age"), "age_cod"),
            with_unit(num("weight", 0.5, 300.0, true, Demo, "wt"), "wt_cod"),
            num("height_cm", 30.0, 250.0, false, Demo, "height"),
            with_transform(
                num("report_year", 2010.0, 2024.0, true, Demo, "rept_dt"),
                Transform::Year,
            ),
            with_transform(
                num("report_month", 1.0, 12.0, false, Demo, "rept_dt"),
                Transform::Month,
            ),
            num("dose_amount", 0.0, 5000.0, true, Drug, "dose_amt"),
            num("dose_frequency", 0.0, 24.0, false, Drug, "dose_freq"),
            num("therapy_days", 0.0, 3650.0, true, Drug, "therapy_days"),
            num("onset_days", 0.0, 3650.0, true, Drug, "onset_days"),
            num("concomitant_drugs", 0.0, 50.0, true, Demo, "n_concomitant"),
            num("indications", 0.0, 20.0, false, Demo, "n_indications"),
            num("alt", 0.0, 2000.0, true, Demo, "lab_alt"),
            num("ast", 0.0, 2000.0, true, Demo, "lab_ast"),
            num("creatinine", 0.1, 20.0, true, Demo, "lab_creatinine"),
            num("hemoglobin", 3.0, 25.0, true, Demo, "lab_hemoglobin"),
            num("wbc", 0.1, 100.0, true, Demo, "lab_wbc"),
            num("platelets", 1.0, 1500.0, true, Demo, "lab_platelets"),
            num("heart_rate", 20.0, 250.0, true, Demo, "heart_rate"),
            num("systolic_bp", 50.0, 250.0, true, Demo, "systolic_bp"),
            num("temperature", 30.0, 45.0, true, Demo, "temperature"),
            cat("gender_f", true, Demo, "sex", "F"),
            cat("gender_m", true, Demo, "sex", "M"),
            cat("gender_unk", true, Demo, "sex", "UNK"),
            cat("route_oral", true, Drug, "route", "ORAL"),
            cat("route_iv", true, Drug, "route", "INTRAVENOUS"),
            cat("route_im", true, Drug, "route", "INTRAMUSCULAR"),
            cat("route_sc", true, Drug, "route", "SUBCUTANEOUS"),
            cat("route_topical", true, Drug, "route", "TOPICAL"),
            cat(
                "route_inhaled",
                true,
                Drug,
                "route",
                "RESPIRATORY (INHALATION)",
            ),
            cat("reporter_md", false, Demo, "occp_cod", "MD"),
            cat("reporter_ph", false, Demo, "occp_cod", "PH"),
            cat("reporter_cn", false, Demo, "occp_cod", "CN"),
            cat("reporter_ot", false, Demo, "occp_cod", "OT"),
            cat("report_exp", true, Demo, "rept_cod", "EXP"),
            cat("report_per", true, Demo, "rept_cod", "PER"),
            cat("report_dir", true, Demo, "rept_cod", "DIR"),
            cat("role_ps", true, Drug, "role_cod", "PS"),
            cat("role_ss", true, Drug, "role_cod", "SS"),
        ];
        Self { columns }
    }
}
