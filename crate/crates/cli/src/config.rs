//! Run configuration: one TOML file of flat `key = value` sections, with a
//! few command-line flags layered on top.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! output = "run"
//!
//! [input]
//! source = "synthetic"   # or "faers", with paths.input and quarter
//! size = 5868
//! n_adr = 10
//!
//! [split]
//! n = 3
//!
//! [detection]
//! epsilon = 0.42
//!
//! [predictor]
//! learning_rate = 0.3
//! epochs = 100
//!
//! [bias]
//! mode = "label_flip"
//! intensity = 1.0
//! seed = 1
//! target = { kind = "tables", tables = [{ client_id = 1, adr_id = 0 }] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use adrsig_core::detect::DetectionConfig;
use adrsig_core::ingest::{BiasSpec, SyntheticConfig};
use adrsig_core::metrics::Averaging;
use adrsig_core::predictor::PredictorConfig;
use adrsig_core::{FeatureSchema, Quarter};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Synthetic,
    Faers,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// FAERS quarter directory, or a dataset / split / run directory for the
    /// single-stage subcommands.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// JSON feature schema; the built-in FAERS schema when absent.
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub source: Source,
    /// `2020Q1` or `20Q1`; required for `faers`.
    pub quarter: Option<String>,
    pub size: usize,
    pub n_adr: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            quarter: None,
            size: 5868,
            n_adr: 10,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Share of the clean dataset held out from training for scoring.
    pub test_fraction: f64,
    pub averaging: Averaging,
    /// Extra learning rates whose loss curves are traced alongside the main
    /// run.
    pub trace_rates: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            averaging: Averaging::Macro,
            trace_rates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasSpec>,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            paths: Paths::default(),
            input: InputConfig::default(),
            split: SplitConfig::default(),
            detection: DetectionConfig::default(),
            predictor: PredictorConfig::default(),
            evaluation: EvaluationConfig::default(),
            bias: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` if given, applies the overrides and checks the result.
    /// Without a file the seed must come from the command line.
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => {
                let seed = o.seed.ok_or_else(|| {
                    CliError::Config("a seed is required: pass --seed or a config file".into())
                })?;
                Self::with_seed(seed)
            }
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(e) = o.epsilon {
            cfg.detection.epsilon = e;
        }
        if let Some(lr) = o.lr {
            cfg.predictor.learning_rate = lr;
        }
        if let Some(n) = o.epochs {
            cfg.predictor.epochs = n;
        }
        if o.out.is_some() {
            cfg.paths.output = o.out.clone();
        }
        if o.input.is_some() {
            cfg.paths.input = o.input.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.split.n == 0 {
            return bad("split.n must be at least 1");
        }
        if !(self.detection.epsilon >= 0.0) {
            return bad("detection.epsilon must be non-negative");
        }
        if self.input.n_adr == 0 || self.input.size < self.input.n_adr {
            return bad("input.size must be at least input.n_adr, which must be positive");
        }
        if !(0.0..1.0).contains(&self.evaluation.test_fraction) {
            return bad("evaluation.test_fraction must lie in [0, 1)");
        }
        if self.input.source == Source::Faers && self.input.quarter.is_none() {
            return bad("input.quarter is required for FAERS input");
        }
        self.quarter()?;
        Ok(())
    }

    pub fn quarter(&self) -> Result<Option<Quarter>, CliError> {
        self.input
            .quarter
            .as_deref()
            .map(|q| {
                q.parse()
                    .map_err(|e| CliError::Config(format!("input.quarter: {e}")))
            })
            .transpose()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.paths.input.as_deref().ok_or_else(|| {
            CliError::Config("an input path is required: pass --input or set paths.input".into())
        })
    }

    pub fn schema(&self) -> Result<FeatureSchema, CliError> {
        match &self.paths.schema {
            None => Ok(FeatureSchema::default_faers()),
            Some(p) => {
                let bytes =
                    fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Predictor settings with the class count taken from the data.
    pub fn predictor_for(&self, m: usize) -> PredictorConfig {
        let mut p = self.predictor.clone();
        p.n_classes = m;
        if let Some(last) = p.fc_dims.last_mut() {
            *last = m;
        }
        p
    }

    /// Hash of everything that shapes the outputs. Paths are left out so
    /// that the same run in another directory hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        crate::manifest::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_needs_only_a_seed() {
        let c = PipelineConfig::parse("seed = 3").unwrap();
        assert_eq!(c, PipelineConfig::with_seed(3));
        assert!(PipelineConfig::parse("").is_err());
    }

    #[test]
    fn sections_and_bias_parse() {
        let text = r#"
            seed = 9
            [split]
            n = 4
            [detection]
            epsilon = 0.5
            [detection.training]
            learning_rate = 0.2
            [predictor]
            epochs = 5
            [bias]
            mode = "feature_shift"
            columns = ["age"]
            delta = -0.7
            intensity = 1.0
            seed = 2
            target = { kind = "clients", clients = [1] }
        "#;
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.split.n, 4);
        assert_eq!(c.detection.epsilon, 0.5);
        assert_eq!(c.detection.training.learning_rate, 0.2);
        assert_eq!(c.detection.training.epochs, 30);
        assert_eq!(c.predictor.epochs, 5);
        assert!(c.bias.is_some());
        let back = PipelineConfig::parse(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("seed = 1\n[split]\nclients = 3").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 1\n[detection]\nepsilon = 9.0\n").unwrap();
        let o = Overrides {
            seed: Some(5),
            epsilon: Some(0.25),
            lr: Some(0.1),
            epochs: Some(2),
            out: Some("x".into()),
            input: None,
        };
        let c = PipelineConfig::load(Some(&path), &o).unwrap();
        assert_eq!(
            (
                c.seed,
                c.detection.epsilon,
                c.predictor.learning_rate,
                c.predictor.epochs
            ),
            (5, 0.25, 0.1, 2)
        );
        assert_eq!(c.output_dir(), PathBuf::from("x"));
        assert!(PipelineConfig::load(None, &Overrides::default()).is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = PipelineConfig::with_seed(1);
        let mut b = a.clone();
        b.paths.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn class_count_follows_data() {
        let p = PipelineConfig::with_seed(0).predictor_for(4);
        assert_eq!(p.n_classes, 4);
        assert_eq!(p.fc_dims.last(), Some(&4));
        assert!(p.validate().is_ok());
    }
}
