//! FAERS-style quarterly ASCII files.
//!
//! Each quarter is four files, `DEMOyyQq.txt`, `DRUGyyQq.txt`,
//! `REACyyQq.txt` and `OUTCyyQq.txt`. Fields are separated by `$` with no
//! quoting or escaping; the first line is a header. A trailing `$` yields an
//! empty last field, which is preserved.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::domain::Quarter;

pub const DELIMITER: char = '$';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaersFile {
    Demo,
    Drug,
    Reac,
    Outc,
}

impl FaersFile {
    pub const ALL: [FaersFile; 4] = [
        FaersFile::Demo,
        FaersFile::Drug,
        FaersFile::Reac,
        FaersFile::Outc,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            FaersFile::Demo => "DEMO",
            FaersFile::Drug => "DRUG",
            FaersFile::Reac => "REAC",
            FaersFile::Outc => "OUTC",
        }
    }

    pub fn file_name(self, quarter: Quarter) -> String {
        format!("{}{}.txt", self.prefix(), quarter.file_tag())
    }
}

/// Header plus string rows of one file. No type coercion happens here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    }

    /// Parses `$`-delimited text. Lines are split on `\n`, with one trailing
    /// `\r` stripped; a final empty line is ignored.
    pub fn parse(text: &str, file: &str) -> Result<Self, IngestError> {
        let mut lines = text.split('\n').enumerate().peekable();
        let header = match lines.next() {
            Some((_, h)) => split_line(h),
            None => return Ok(Self::default()),
        };
        let mut rows = Vec::new();
        while let Some((idx, line)) = lines.next() {
            if line.is_empty() && lines.peek().is_none() {
                break;
            }
            let fields = split_line(line);
            if fields.len() != header.len() {
                return Err(IngestError::RaggedRow {
                    file: file.to_string(),
                    line_no: idx + 1,
                    expected: header.len(),
                    found: fields.len(),
                });
            }
            rows.push(fields);
        }
        Ok(Self { header, rows })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&join_line(&self.header));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&join_line(r));
            out.push('\n');
        }
        out
    }
}

fn split_line(line: &str) -> Vec<String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    line.split(DELIMITER).map(str::to_string).collect()
}

fn join_line(fields: &[String]) -> String {
    let mut s = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            s.push(DELIMITER);
        }
        s.push_str(f);
    }
    s
}

/// The four tables of one quarter, keyed by a shared `primaryid` column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQuarter {
    pub quarter: Quarter,
    pub demo: RawTable,
    pub drug: RawTable,
    pub reac: RawTable,
    pub outc: RawTable,
}

impl RawQuarter {
    pub fn table(&self, f: FaersFile) -> &RawTable {
        match f {
            FaersFile::Demo => &self.demo,
            FaersFile::Drug => &self.drug,
            FaersFile::Reac => &self.reac,
            FaersFile::Outc => &self.outc,
        }
    }

    fn table_mut(&mut self, f: FaersFile) -> &mut RawTable {
        match f {
            FaersFile::Demo => &mut self.demo,
            FaersFile::Drug => &mut self.drug,
            FaersFile::Reac => &mut self.reac,
            FaersFile::Outc => &mut self.outc,
        }
    }

    /// Every DRUG/REAC/OUTC row must reference a `primaryid` present in DEMO.
    pub fn check_keys(&self) -> Result<(), IngestError> {
        let name = |f: FaersFile| f.file_name(self.quarter);
        let demo_col = primaryid_column(&self.demo, &name(FaersFile::Demo))?;
        let ids: HashSet<&str> = self
            .demo
            .rows
            .iter()
            .map(|r| r[demo_col].as_str())
            .collect();
        for f in [FaersFile::Drug, FaersFile::Reac, FaersFile::Outc] {
            let t = self.table(f);
            let col = primaryid_column(t, &name(f))?;
            for (i, r) in t.rows.iter().enumerate() {
                if !ids.contains(r[col].as_str()) {
                    return Err(IngestError::OrphanRow {
                        file: name(f),
                        line_no: i + 2,
                        primaryid: r[col].clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn primaryid_column(t: &RawTable, file: &str) -> Result<usize, IngestError> {
    t.column("primaryid")
        .ok_or_else(|| IngestError::MissingColumn {
            file: file.to_string(),
            column: "primaryid".to_string(),
        })
}

/// Finds `name` in `dir`, matching the file name case-insensitively.
fn locate(dir: &Path, name: &str) -> Result<PathBuf, IngestError> {
    let exact = dir.join(name);
    if exact.is_file() {
        return Ok(exact);
    }
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for e in entries.flatten() {
        if e.file_name().to_string_lossy().eq_ignore_ascii_case(name) {
            return Ok(e.path());
        }
    }
    Err(IngestError::MissingFile { path: exact })
}

pub fn parse_quarter(dir: &Path, quarter: Quarter) -> Result<RawQuarter, IngestError> {
    let mut raw = RawQuarter {
        quarter,
        demo: RawTable::default(),
        drug: RawTable::default(),
        reac: RawTable::default(),
        outc: RawTable::default(),
    };
    for f in FaersFile::ALL {
        let name = f.file_name(quarter);
        let path = locate(dir, &name)?;
        let bytes = fs::read(&path).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|e| IngestError::NonUtf8Input {
            file: name.clone(),
            byte_offset: e.utf8_error().valid_up_to(),
        })?;
        *raw.table_mut(f) = RawTable::parse(&text, &name)?;
    }
    raw.check_keys()?;
    Ok(raw)
}

/// Writes the four files of `raw` into `dir`.
pub fn write_quarter(raw: &RawQuarter, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for f in FaersFile::ALL {
        let path = dir.join(f.file_name(raw.quarter));
        fs::write(&path, raw.table(f).serialize()).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_file_has_no_rows() {
        let t = RawTable::parse("primaryid$age$sex$wt\n", "DEMO").unwrap();
        assert_eq!(t.header, ["primaryid", "age", "sex", "wt"]);
        assert!(t.rows.is_empty());
    }

    #[test]
    fn body_line_splits_on_dollar() {
        let t = RawTable::parse("primaryid$age$sex$wt\n100$55$F$70.5\n", "DEMO").unwrap();
        assert_eq!(t.rows, vec![vec!["100", "55", "F", "70.5"]]);
    }

    #[test]
    fn ragged_row_rejected() {
        let err = RawTable::parse("primaryid$age$sex$wt\n100$55$F\n", "DEMO").unwrap_err();
        match err {
            IngestError::RaggedRow {
                line_no,
                expected,
                found,
                ..
            } => {
                assert_eq!((line_no, expected, found), (2, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_trailing_fields_preserved() {
        let text = "primaryid$pt$\n7$Headache$\n8$$\n";
        let t = RawTable::parse(text, "REAC").unwrap();
        assert_eq!(t.rows[1], vec!["8", "", ""]);
        assert_eq!(t.serialize(), text);
    }

    #[test]
    fn crlf_lines_accepted() {
        let t = RawTable::parse("primaryid$pt\r\n1$Rash\r\n", "REAC").unwrap();
        assert_eq!(t.rows, vec![vec!["1", "Rash"]]);
    }

    #[test]
    fn file_names_follow_faers_convention() {
        let q = Quarter::new(2019, 3);
        assert_eq!(FaersFile::Demo.file_name(q), "DEMO19Q3.txt");
        assert_eq!(FaersFile::Outc.file_name(q), "OUTC19Q3.txt");
    }
}
