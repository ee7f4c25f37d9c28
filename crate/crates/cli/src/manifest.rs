//! `manifest.json`: config hash, input hashes, and the outputs of every
//! completed stage, rewritten after each stage so a failed run still says
//! how far it got.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const FILE_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Output path relative to the run directory, with `/` separators, to
    /// the SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(FILE_NAME);
        let bytes = fs::read(&path).map_err(|e| CliError::input(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::input(&path, e))
    }
}

/// Every regular file under `path`, keyed by its path relative to `base`.
/// A file `path` is keyed by its own name.
pub fn hash_tree(path: &Path, base: &Path) -> Result<BTreeMap<String, String>, std::io::Error> {
    let mut out = BTreeMap::new();
    if path.is_file() {
        let key = match path.strip_prefix(base) {
            Ok(rel) if !rel.as_os_str().is_empty() => rel_key(rel),
            _ => path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        out.insert(key, sha256_hex(&fs::read(path)?));
        return Ok(out);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for e in entries {
        out.extend(hash_tree(&e, base)?);
    }
    Ok(out)
}

fn rel_key(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// The manifest of one run directory.
pub struct Recorder {
    dir: PathBuf,
    manifest: Manifest,
}

impl Recorder {
    /// Hashes the inputs and writes an initial manifest. Inputs are keyed
    /// relative to their own parent so the key does not depend on where
    /// they live.
    pub fn start(
        dir: &Path,
        command: &str,
        config_hash: String,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        let mut hashed = BTreeMap::new();
        for p in inputs {
            let base = p.parent().unwrap_or(Path::new(""));
            hashed.extend(hash_tree(p, base).map_err(|e| CliError::input(*p, e))?);
        }
        let rec = Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                config_hash,
                inputs: hashed,
                stages: Vec::new(),
                status: Status::Running,
                error: None,
            },
        };
        rec.write()?;
        Ok(rec)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Records a finished stage and its outputs, given relative to the run
    /// directory.
    pub fn stage(&mut self, name: &str, outputs: &[&str]) -> Result<(), CliError> {
        let mut hashed = BTreeMap::new();
        for o in outputs {
            let p = self.dir.join(o);
            hashed.extend(hash_tree(&p, &self.dir).map_err(|e| CliError::output(&p, e))?);
        }
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            outputs: hashed,
        });
        self.write()
    }

    pub fn finish(mut self) -> Result<Manifest, CliError> {
        self.manifest.status = Status::Complete;
        self.write()?;
        Ok(self.manifest)
    }

    pub fn fail(mut self, err: &CliError) -> Result<(), CliError> {
        self.manifest.status = Status::Failed;
        self.manifest.error = Some(err.to_string());
        self.write()
    }

    fn write(&self) -> Result<(), CliError> {
        let path = self.dir.join(FILE_NAME);
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| CliError::output(&path, e))
    }
}
