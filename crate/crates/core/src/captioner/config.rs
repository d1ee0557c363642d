use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Layer sizes and regularization. Data-derived dimensions live on
/// [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub bigru1_cells: usize,
    pub bigru2_cells: usize,
    pub caption_gru_cells: usize,
    pub decoder_gru_cells: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
    /// Insert a LeakyReLU dense layer between the decoder GRU and the output.
    pub use_leaky_dense: bool,
    pub leaky_dense_units: usize,
    /// Update the word embeddings during captioner training.
    pub train_embeddings: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            bigru1_cells: 32,
            bigru2_cells: 64,
            caption_gru_cells: 128,
            decoder_gru_cells: 128,
            embed_dim: 256,
            dropout: 0.5,
            max_decode_len: 30,
            use_leaky_dense: true,
            leaky_dense_units: 128,
            train_embeddings: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub event_dim: usize,
    pub vocab_size: usize,
    pub arch: Architecture,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, event_dim: usize, vocab_size: usize, arch: Architecture) -> Self {
        Self {
            feature_dim,
            event_dim,
            vocab_size,
            arch,
        }
    }

    pub fn encoder_input_dim(&self) -> usize {
        self.feature_dim + self.event_dim
    }

    pub fn audio_context_dim(&self) -> usize {
        2 * self.arch.bigru2_cells
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.audio_context_dim() + self.arch.caption_gru_cells
    }

    pub fn output_input_dim(&self) -> usize {
        if self.arch.use_leaky_dense {
            self.arch.leaky_dense_units
        } else {
            self.arch.decoder_gru_cells
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        let sizes = [
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("bigru1_cells", a.bigru1_cells),
            ("bigru2_cells", a.bigru2_cells),
            ("caption_gru_cells", a.caption_gru_cells),
            ("decoder_gru_cells", a.decoder_gru_cells),
            ("embed_dim", a.embed_dim),
            ("max_decode_len", a.max_decode_len),
            ("leaky_dense_units", a.leaky_dense_units),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be >= 1")));
        }
        if self.vocab_size < 5 {
            return Err(Error::invalid(format!(
                "model config: vocab_size {} leaves no room beyond the 4 reserved tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&a.dropout) {
            return Err(Error::invalid(format!("model config: dropout {} not in [0, 1)", a.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train config: epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "train config: batch_size {} < 2 (batch norm needs two examples)",
                self.batch_size
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::invalid("train config: adam hyperparameters out of range"));
        }
        Ok(())
    }
}
