//! LSTM encoder-decoder written from scratch: a shared embedding, a
//! bidirectional encoder, a stacked decoder initialised from the encoder
//! summary, teacher-forced cross-entropy training, greedy decoding and a
//! checksummed checkpoint format.

mod cell;
mod checkpoint;
mod model;
mod tensor;
mod train;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cell::{lstm_step, lstm_step_backward, recurrent_cell, CellCache, LstmParams};
pub use checkpoint::{load_model, model_digest, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use model::{DecoderState, Encoded, EncodedPair, Linear, Parameters, Seq2SeqModel};
pub use tensor::{argmax, sigmoid, softmax, Matrix};
pub use train::{
    exact_match, split_validation, train, train_step, train_step_encoded, OptimizerState, TrainingState,
    ValidationPoint, ValidationScore,
};
pub use vocab::{build_vocabulary, vocabulary_for_pairs, Vocabulary, EOS, PAD, RESERVED, SOS, UNK};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

/// Architecture and training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_units: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Maximum number of emitted tokens, excluding SOS/EOS.
    pub max_decode_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
    /// Added to every LSTM forget-gate bias at initialisation, so cells start
    /// out retaining their state.
    pub forget_bias: f64,
    pub optimizer: Optimizer,
    /// Steps between validation checks.
    pub iteration_steps: usize,
    pub max_steps: usize,
    /// Validation checks without improvement tolerated before stopping.
    pub patience: usize,
    /// Minimum token count for a vocabulary entry.
    pub min_count: usize,
    /// Fraction of training pairs held out for validation.
    pub validation_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small model that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            embedding_dim: 32,
            hidden_units: 32,
            encoder_layers: 1,
            decoder_layers: 2,
            max_decode_length: 64,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 0,
            clip_norm: 5.0,
            forget_bias: 1.0,
            optimizer: Optimizer::Adam,
            iteration_steps: 500,
            max_steps: 5_000,
            patience: 1,
            min_count: 1,
            validation_fraction: 0.1,
        }
    }

    /// The published model size and stopping schedule.
    pub fn paper() -> Self {
        ModelConfig {
            embedding_dim: 256,
            hidden_units: 256,
            iteration_steps: 5_000,
            max_steps: 50_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_units", self.hidden_units),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("batch_size", self.batch_size),
            ("iteration_steps", self.iteration_steps),
            ("patience", self.patience),
            ("min_count", self.min_count),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_decode_length < 52 {
            return Err(Error::Config(format!(
                "max_decode_length must be at least 52, got {}",
                self.max_decode_length
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be finite and positive".into()));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("forget_bias must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}
