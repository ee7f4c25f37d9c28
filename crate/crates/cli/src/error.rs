use std::path::PathBuf;

use adrsig_core::detect::DetectError;
use adrsig_core::domain::DatasetIoError;
use adrsig_core::ingest::IngestError;
use adrsig_core::metrics::MetricsError;
use adrsig_core::predictor::PredictError;
use adrsig_core::signal::SignalError;
use adrsig_core::split::SplitError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Anything not covered below, such as a failed write.
    pub const FAILURE: i32 = 1;
    /// Unreadable or malformed input or configuration.
    pub const INPUT: i32 = 2;
    /// Detection flagged every table.
    pub const DETECTION_DEGENERATE: i32 = 3;
    /// Predictor training diverged.
    pub const TRAINING_DIVERGED: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("reading {path}: {message}")]
    Input { path: PathBuf, message: String },
}

impl CliError {
    pub fn output(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Output {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn input(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Input {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Detect(DetectError::AllTablesFlagged) => exit::DETECTION_DEGENERATE,
            CliError::Predict(PredictError::NonFiniteLoss { .. }) => exit::TRAINING_DIVERGED,
            CliError::Config(_)
            | CliError::Ingest(_)
            | CliError::Dataset(_)
            | CliError::Split(_)
            | CliError::Signal(_)
            | CliError::Input { .. } => exit::INPUT,
            CliError::Output { .. }
            | CliError::Detect(_)
            | CliError::Predict(_)
            | CliError::Metrics(_) => exit::FAILURE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_table() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Ingest(IngestError::MissingFile {
                path: "DEMO".into()
            })
            .exit_code(),
            2
        );
        assert_eq!(
            CliError::Detect(DetectError::AllTablesFlagged).exit_code(),
            3
        );
        assert_eq!(
            CliError::Predict(PredictError::NonFiniteLoss { epoch: 4 }).exit_code(),
            4
        );
        assert_eq!(CliError::output("a", "disk full").exit_code(), 1);
    }
}
