use serde::{Deserialize, Serialize};

use super::PredictError;

/// How parameters are drawn before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Every weight from `U(-limit, limit)`; biases zero.
    Uniform { limit: f64 },
    /// Weights from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`;
    /// biases zero, except the LSTM forget gate at 1.
    Glorot,
    /// Weights from `U(-a, a)` with `a = gain * sqrt(6 / fan_in)`, except
    /// the query map, which starts at zero so attention starts uniform.
    /// Biases as for `Glorot`.
    He { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Tokens the flat feature vector is projected into.
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    pub conv_channels: (usize, usize),
    pub pool_width: usize,
    /// Hidden width per direction.
    pub lstm_hidden: usize,
    /// Widths of the fully connected stack; the last one is the class count.
    pub fc_dims: Vec<usize>,
    /// Dropout after FC1, FC2 and FC3.
    pub dropout_rates: Vec<f64>,
    pub n_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub signal_threshold: f64,
    pub init: InitScheme,
    /// Rows per work unit when a batch is spread over threads. Results do
    /// not depend on the thread count, only on this value.
    pub chunk_rows: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self::for_classes(10)
    }
}

impl PredictorConfig {
    pub fn for_classes(m: usize) -> Self {
        Self {
            seq_len: 8,
            d_model: 32,
            n_heads: 4,
            conv_kernel: 4,
            conv_channels: (16, 32),
            pool_width: 2,
            lstm_hidden: 16,
            fc_dims: vec![256, 128, 64, 32, m],
            dropout_rates: vec![0.5, 0.5, 0.25],
            n_classes: m,
            learning_rate: 0.03,
            epochs: 100,
            seed: 0,
            signal_threshold: 0.9,
            init: InitScheme::He { gain: 1.0 },
            chunk_rows: 128,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Sequence length after pooling.
    pub fn pooled_len(&self) -> usize {
        self.seq_len / self.pool_width
    }

    /// Width of the flattened recurrent output fed to FC1.
    pub fn flat_width(&self) -> usize {
        self.pooled_len() * 2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |msg: String| Err(PredictError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.seq_len == 0
            || self.conv_kernel == 0
            || self.pool_width == 0
            || self.lstm_hidden == 0
        {
            return bad("sizes must be positive".into());
        }
        if self.pooled_len() == 0 {
            return bad(format!(
                "pool width {} exceeds sequence length {}",
                self.pool_width, self.seq_len
            ));
        }
        if self.conv_channels.0 == 0 || self.conv_channels.1 == 0 {
            return bad("conv channels must be positive".into());
        }
        if self.fc_dims.last() != Some(&self.n_classes) {
            return bad(format!(
                "last FC width must equal n_classes {}",
                self.n_classes
            ));
        }
        if self.fc_dims.iter().any(|&w| w == 0) {
            return bad("FC widths must be positive".into());
        }
        if self.dropout_rates.len() >= self.fc_dims.len() {
            return bad("dropout may follow every FC layer but the last".into());
        }
        if self.dropout_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        if self.chunk_rows == 0 {
            return bad("chunk_rows must be positive".into());
        }
        Ok(())
    }
}
