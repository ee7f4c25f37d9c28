//! ADR-signal network: learned tokenizer, multi-head self-attention, two
//! 1-D convolutions around a max pool, a bidirectional LSTM and a dense
//! stack ending in a softmax over ADR classes. Gradients are hand-derived.

mod config;
pub mod gradcheck;
mod io;
pub mod layers;
mod network;
mod params;
mod train;

pub use config::{InitScheme, PredictorConfig};
pub use io::{read_params, write_params, MAGIC};
pub use network::{backward, forward, loss, loss_and_grads, probabilities, ForwardCache};
pub use params::{DenseParams, LstmParams, PredictorParams};
pub use train::{
    design_matrix, input_moments, loss_curve, predict_signals, train, train_matrix,
    write_predictions_csv, SignalPrediction, TrainingTrace,
};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("invalid predictor configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no records to train on")]
    EmptyDataset,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("record {record} has missing features")]
    IncompleteFeatures { record: String },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed parameter file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
