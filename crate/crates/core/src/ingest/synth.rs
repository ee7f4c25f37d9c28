//! Seeded synthetic adverse-event corpora.
//!
//! Each ADR gets its own mean vector over the generic numeric columns, picked
//! from a fixed grid of levels (the layout does not depend on the seed), with
//! shared unit-scale noise around it. Every ADR also has a *signal drug*
//! that accounts for a fixed share of its reports and carries most of its
//! serious outcomes, so both the per-table severity classifiers and the
//! ROR/PRR statistics have structure to find.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{
    AdrId, AdverseEventRecord, BiasAnnotation, Column, ColumnKind, Dataset, FeatureSchema,
    Provenance, Quarter, Rng, Transform,
};

const BASE_ADR_NAMES: [&str; 10] = [
    "abnormal respiration",
    "aplastic anaemia",
    "bone marrow failure",
    "cough",
    "headache",
    "lower respiratory tract infection",
    "nausea",
    "pyrexia",
    "rash",
    "tachycardia",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Number of distinct drug codes; `None` means twice the ADR count.
    pub n_drugs: Option<usize>,
    /// Share of an ADR's reports that name its signal drug.
    pub signal_share: f64,
    /// Number of grid levels for per-ADR feature means.
    pub grid_levels: usize,
    /// Distance between adjacent grid levels, in noise standard deviations.
    pub grid_spacing: f64,
    /// Severity log-odds for a report naming a non-signal drug.
    pub severity_intercept: f64,
    /// Added log-odds when the report names the ADR's signal drug.
    pub severity_signal: f64,
    /// Log-odds per unit of within-ADR feature noise on three columns.
    pub severity_slope: f64,
    pub duplicate_rate: f64,
    pub outlier_rate: f64,
    pub missing_rate: f64,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_drugs: None,
            signal_share: 0.4,
            grid_levels: 5,
            grid_spacing: 1.0,
            severity_intercept: -6.0,
            severity_signal: 3.0,
            severity_slope: 0.5,
            duplicate_rate: 0.01,
            outlier_rate: 0.002,
            missing_rate: 0.002,
            first_date: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            last_date: NaiveDate::from_ymd_opt(2024, 9, 30).expect("valid date"),
        }
    }
}

/// Names for `n` ADRs, sorted so that name order equals id order.
pub fn adr_names(n: usize) -> Vec<String> {
    if n <= BASE_ADR_NAMES.len() {
        BASE_ADR_NAMES[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("adr {i:03}")).collect()
    }
}

pub fn drug_code(index: usize) -> String {
    format!("D{index:03}")
}

/// Drug whose reports are over-represented for `adr`.
pub fn signal_drug(adr: AdrId) -> String {
    drug_code(adr.index())
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

/// Per-column generation rule, resolved once from the schema.
enum Rule {
    Generic {
        index: usize,
        center: f64,
        scale: f64,
    },
    Year,
    Month,
    Dose,
    /// One-hot group: the columns in the group and how to pick a category.
    Group {
        columns: Vec<usize>,
        by_drug: bool,
        key: u64,
    },
    /// Column already filled by its group.
    Member,
}

fn rules(schema: &FeatureSchema) -> Vec<Rule> {
    let mut out: Vec<Rule> = Vec::with_capacity(schema.len());
    let mut generic = 0;
    for (i, c) in schema.columns.iter().enumerate() {
        let rule = match c.kind {
            ColumnKind::Numeric => {
                let src = c.source.as_ref();
                match (src.and_then(|s| s.transform), src.map(|s| s.field.as_str())) {
                    (Some(Transform::Year), _) => Rule::Year,
                    (Some(Transform::Month), _) => Rule::Month,
                    (None, Some("dose_amt")) => Rule::Dose,
                    _ => {
                        generic += 1;
                        numeric_rule(c, generic - 1)
                    }
                }
            }
            ColumnKind::CategoricalEncoded => {
                let group = c.group();
                let first = schema.columns[..i]
                    .iter()
                    .any(|p| p.kind == ColumnKind::CategoricalEncoded && p.group() == group);
                if first {
                    Rule::Member
                } else {
                    let columns = schema
                        .columns
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| {
                            p.kind == ColumnKind::CategoricalEncoded && p.group() == group
                        })
                        .map(|(k, _)| k)
                        .collect();
                    Rule::Group {
                        columns,
                        by_drug: group == "route",
                        key: hash_str(group),
                    }
                }
            }
        };
        out.push(rule);
    }
    out
}

fn numeric_rule(c: &Column, index: usize) -> Rule {
    let width = c.upper_bound - c.lower_bound;
    Rule::Generic {
        index,
        center: c.lower_bound + 0.5 * width,
        scale: width / 16.0,
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    schema: &'a FeatureSchema,
    rules: Vec<Rule>,
    n_drugs: usize,
    day_span: i64,
}

impl Generator<'_> {
    fn grid_mean(&self, adr: usize, column: usize) -> f64 {
        let g = self.cfg.grid_levels.max(1);
        let level = (splitmix((adr as u64) * 1_000_003 + column as u64) % g as u64) as f64;
        self.cfg.grid_spacing * (level - (g as f64 - 1.0) / 2.0)
    }

    fn record(&self, serial: usize, adr: usize, rng: &mut Rng) -> AdverseEventRecord {
        let cfg = self.cfg;
        let drug = if rng.bernoulli(cfg.signal_share) {
            adr % self.n_drugs
        } else {
            rng.below(self.n_drugs)
        };
        let event_date =
            cfg.first_date + Duration::days(rng.below(self.day_span as usize + 1) as i64);

        let mut raw = vec![None; self.schema.len()];
        let mut noise_terms = [0.0f64; 3];
        for (i, rule) in self.rules.iter().enumerate() {
            let col = &self.schema.columns[i];
            match rule {
                Rule::Generic {
                    index,
                    center,
                    scale,
                } => {
                    let eps = rng.normal();
                    if *index < noise_terms.len() {
                        noise_terms[*index] = eps;
                    }
                    let z = self.grid_mean(adr, *index) + eps;
                    raw[i] = Some((center + scale * z).clamp(col.lower_bound, col.upper_bound));
                }
                Rule::Year => raw[i] = Some(event_date.year() as f64),
                Rule::Month => raw[i] = Some(event_date.month() as f64),
                Rule::Dose => {
                    let level = 50.0 * (1 + (drug * 7) % 20) as f64;
                    let v = level * (1.0 + 0.1 * rng.normal());
                    raw[i] = Some(v.clamp(col.lower_bound, col.upper_bound));
                }
                Rule::Group {
                    columns,
                    by_drug,
                    key,
                } => {
                    let r = columns.len();
                    let preferred = if *by_drug {
                        drug % r
                    } else {
                        (splitmix(key ^ adr as u64) % r as u64) as usize
                    };
                    let stick = if *by_drug { 0.85 } else { 0.6 };
                    let pick = if rng.bernoulli(stick) {
                        preferred
                    } else {
                        rng.below(r)
                    };
                    for (k, &c) in columns.iter().enumerate() {
                        raw[c] = Some(if k == pick { 1.0 } else { 0.0 });
                    }
                }
                Rule::Member => {}
            }
        }

        let logit = cfg.severity_intercept
            + if drug == adr % self.n_drugs {
                cfg.severity_signal
            } else {
                0.0
            }
            + cfg.severity_slope * (noise_terms[0] + noise_terms[1] - noise_terms[2]);
        let outcome_severe = rng.uniform() < 1.0 / (1.0 + (-logit).exp());

        for v in raw.iter_mut() {
            if rng.bernoulli(cfg.missing_rate) {
                *v = None;
            }
        }
        if rng.bernoulli(cfg.outlier_rate) {
            let generic: Vec<usize> = self
                .rules
                .iter()
                .enumerate()
                .filter(|(_, r)| matches!(r, Rule::Generic { .. }))
                .map(|(i, _)| i)
                .collect();
            if !generic.is_empty() {
                let i = generic[rng.below(generic.len())];
                let c = &self.schema.columns[i];
                raw[i] = Some(c.upper_bound + 0.5 * (c.upper_bound - c.lower_bound));
            }
        }

        AdverseEventRecord {
            patient_id: format!("S{serial:07}"),
            drug_code: drug_code(drug),
            event_date,
            features: raw.clone(),
            raw_features: raw,
            adr_label: AdrId(adr as u16),
            outcome_severe,
            report_quarter: Quarter::of_date(event_date),
        }
    }
}

/// Generates `size` records over `n_adr` ADRs with the default
/// [`SyntheticConfig`]. The annotation is empty; bias is added separately.
pub fn generate_synthetic(
    size: usize,
    n_adr: usize,
    schema: &FeatureSchema,
    rng: &mut Rng,
) -> (Dataset, BiasAnnotation) {
    generate_with(&SyntheticConfig::default(), size, n_adr, schema, rng)
}

pub fn generate_with(
    cfg: &SyntheticConfig,
    size: usize,
    n_adr: usize,
    schema: &FeatureSchema,
    rng: &mut Rng,
) -> (Dataset, BiasAnnotation) {
    assert!(
        n_adr >= 1 && n_adr <= u16::MAX as usize,
        "n_adr out of range"
    );
    assert!(size >= n_adr, "size must be at least n_adr");
    let generator = Generator {
        cfg,
        schema,
        rules: rules(schema),
        n_drugs: cfg.n_drugs.unwrap_or(2 * n_adr).max(1),
        day_span: (cfg.last_date - cfg.first_date).num_days().max(0),
    };

    // Exact balance: label i mod n_adr, then shuffled.
    let mut labels: Vec<usize> = (0..size).map(|i| i % n_adr).collect();
    rng.shuffle(&mut labels);

    let mut records: Vec<AdverseEventRecord> = Vec::with_capacity(size);
    let mut last_of_label: Vec<Option<usize>> = vec![None; n_adr];
    for (serial, &adr) in labels.iter().enumerate() {
        let dup = rng.bernoulli(cfg.duplicate_rate);
        let record = match (dup, last_of_label[adr]) {
            (true, Some(prev)) => records[prev].clone(),
            _ => generator.record(serial, adr, rng),
        };
        last_of_label[adr] = Some(records.len());
        records.push(record);
    }

    let dataset = Dataset {
        records,
        schema: schema.clone(),
        adr_universe: adr_names(n_adr),
        provenance: Provenance::Original,
    };
    (dataset, BiasAnnotation::default())
}
