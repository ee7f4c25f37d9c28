//! Disproportionality statistics over the 2×2 drug/ADR contingency table.
//!
//! For a drug `D` and ADR `R`:
//!
//! |            | R   | not R |
//! |------------|-----|-------|
//! | D          | a   | b     |
//! | other drug | c   | d     |
//!
//! ROR = (a·d)/(b·c) and PRR = (a/(a+b)) / (c/(c+d)). When any cell is
//! zero, 0.5 is added to all four (Haldane–Anscombe) and the result is
//! marked `corrected`. Intervals are the usual log-normal 95% intervals.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{AdrId, Dataset};

const Z95: f64 = 1.96;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("drug `{0}` does not occur in the dataset")]
    UnknownDrug(String),
    #[error("ADR {0} is outside the dataset's universe")]
    UnknownAdr(AdrId),
    #[error("datasets differ: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Cells as reals, with 0.5 added to each when any is zero.
    pub fn corrected_cells(&self) -> ([f64; 4], bool) {
        let cells = [self.a, self.b, self.c, self.d];
        let corrected = cells.contains(&0);
        let add = if corrected { 0.5 } else { 0.0 };
        (cells.map(|x| x as f64 + add), corrected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub ci95: (f64, f64),
    pub corrected: bool,
}

fn log_interval(point: f64, se: f64) -> (f64, f64) {
    let l = point.ln();
    ((l - Z95 * se).exp(), (l + Z95 * se).exp())
}

pub fn ror(t: &ContingencyTable) -> Ratio {
    let ([a, b, c, d], corrected) = t.corrected_cells();
    let value = (a * d) / (b * c);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    Ratio {
        value,
        ci95: log_interval(value, se),
        corrected,
    }
}

pub fn prr(t: &ContingencyTable) -> Ratio {
    let ([a, b, c, d], corrected) = t.corrected_cells();
    let value = (a / (a + b)) / (c / (c + d));
    let se = (1.0 / a - 1.0 / (a + b) + 1.0 / c - 1.0 / (c + d))
        .max(0.0)
        .sqrt();
    Ratio {
        value,
        ci95: log_interval(value, se),
        corrected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStat {
    pub drug_code: String,
    pub adr_id: AdrId,
    pub counts: ContingencyTable,
    pub ror: f64,
    pub ror_ci95: (f64, f64),
    pub prr: f64,
    pub prr_ci95: (f64, f64),
    pub corrected: bool,
}

impl SignalStat {
    pub fn from_counts(drug_code: &str, adr_id: AdrId, counts: ContingencyTable) -> Self {
        let r = ror(&counts);
        let p = prr(&counts);
        Self {
            drug_code: drug_code.to_string(),
            adr_id,
            counts,
            ror: r.value,
            ror_ci95: r.ci95,
            prr: p.value,
            prr_ci95: p.ci95,
            corrected: r.corrected,
        }
    }
}

/// Report counts by drug and ADR, from which every contingency table of a
/// dataset follows without rescanning.
#[derive(Debug, Clone)]
pub struct CountIndex {
    pair: HashMap<(String, AdrId), u64>,
    by_drug: HashMap<String, u64>,
    by_adr: HashMap<AdrId, u64>,
    total: u64,
}

impl CountIndex {
    pub fn new(d: &Dataset) -> Self {
        let mut idx = CountIndex {
            pair: HashMap::new(),
            by_drug: HashMap::new(),
            by_adr: HashMap::new(),
            total: d.len() as u64,
        };
        for r in &d.records {
            *idx.pair
                .entry((r.drug_code.clone(), r.adr_label))
                .or_default() += 1;
            *idx.by_drug.entry(r.drug_code.clone()).or_default() += 1;
            *idx.by_adr.entry(r.adr_label).or_default() += 1;
        }
        idx
    }

    /// Counts for any pair; absent drugs or ADRs give zero rows/columns.
    pub fn table(&self, drug: &str, adr: AdrId) -> ContingencyTable {
        let a = self
            .pair
            .get(&(drug.to_string(), adr))
            .copied()
            .unwrap_or(0);
        let drug_total = self.by_drug.get(drug).copied().unwrap_or(0);
        let adr_total = self.by_adr.get(&adr).copied().unwrap_or(0);
        let b = drug_total - a;
        let c = adr_total - a;
        ContingencyTable {
            a,
            b,
            c,
            d: self.total - a - b - c,
        }
    }

    pub fn has_drug(&self, drug: &str) -> bool {
        self.by_drug.contains_key(drug)
    }
}

pub fn contingency(d: &Dataset, drug: &str, adr: AdrId) -> Result<ContingencyTable, SignalError> {
    if adr.index() >= d.adr_count() {
        return Err(SignalError::UnknownAdr(adr));
    }
    let idx = CountIndex::new(d);
    if !idx.has_drug(drug) {
        return Err(SignalError::UnknownDrug(drug.to_string()));
    }
    Ok(idx.table(drug, adr))
}

pub fn signal_stat(d: &Dataset, drug: &str, adr: AdrId) -> Result<SignalStat, SignalError> {
    Ok(SignalStat::from_counts(
        drug,
        adr,
        contingency(d, drug, adr)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPair {
    pub original: SignalStat,
    pub clean: SignalStat,
}

/// Paired statistics for every drug seen in either dataset crossed with
/// every ADR of the universe, sorted by ADR then drug.
pub fn compare(original: &Dataset, clean: &Dataset) -> Result<Vec<SignalPair>, SignalError> {
    if original.adr_universe != clean.adr_universe {
        return Err(SignalError::SchemaMismatch("ADR universes differ".into()));
    }
    if original.schema != clean.schema {
        return Err(SignalError::SchemaMismatch("feature schemas differ".into()));
    }
    let io = CountIndex::new(original);
    let ic = CountIndex::new(clean);
    let drugs: BTreeSet<&str> = original
        .records
        .iter()
        .chain(&clean.records)
        .map(|r| r.drug_code.as_str())
        .collect();
    let mut out = Vec::with_capacity(drugs.len() * original.adr_count());
    for j in 0..original.adr_count() {
        let adr = AdrId(j as u16);
        for drug in &drugs {
            out.push(SignalPair {
                original: SignalStat::from_counts(drug, adr, io.table(drug, adr)),
                clean: SignalStat::from_counts(drug, adr, ic.table(drug, adr)),
            });
        }
    }
    Ok(out)
}

pub const REPORT_COLUMNS: [&str; 17] = [
    "adr",
    "drug",
    "ror_orig",
    "ror_clean",
    "prr_orig",
    "prr_clean",
    "ror_ci_lo_orig",
    "ror_ci_hi_orig",
    "ror_ci_lo_clean",
    "ror_ci_hi_clean",
    "prr_ci_lo_orig",
    "prr_ci_hi_orig",
    "prr_ci_lo_clean",
    "prr_ci_hi_clean",
    "a_orig",
    "a_clean",
    "corrected",
];

/// One row per pair; `corrected` is 1 when either side needed the
/// continuity correction.
pub fn write_report_csv<W: Write>(
    pairs: &[SignalPair],
    adr_universe: &[String],
    w: W,
) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(REPORT_COLUMNS)?;
    for p in pairs {
        let (o, c) = (&p.original, &p.clean);
        let adr = adr_universe
            .get(o.adr_id.index())
            .cloned()
            .unwrap_or_else(|| o.adr_id.to_string());
        let row = [
            adr,
            o.drug_code.clone(),
            o.ror.to_string(),
            c.ror.to_string(),
            o.prr.to_string(),
            c.prr.to_string(),
            o.ror_ci95.0.to_string(),
            o.ror_ci95.1.to_string(),
            c.ror_ci95.0.to_string(),
            c.ror_ci95.1.to_string(),
            o.prr_ci95.0.to_string(),
            o.prr_ci95.1.to_string(),
            c.prr_ci95.0.to_string(),
            c.prr_ci95.1.to_string(),
            o.counts.a.to_string(),
            c.counts.a.to_string(),
            u8::from(o.corrected || c.corrected).to_string(),
        ];
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
