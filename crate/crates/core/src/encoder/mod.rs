//! Transformer encoder with a masked-language-model head.
//!
//! Post-layer-norm blocks (self-attention, then a GELU feed-forward), learned
//! absolute positions, and an output projection tied to the token embedding
//! table. Parameters are stored as `f32`; every forward and backward pass runs
//! in `f64` on an [`Encoder`] compiled from them.

mod gradcheck;
mod mask;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use mask::{mlm_mask, targets_from, MaskedSequence};
pub use model::{Encoder, ForwardCache, Mode};
pub use params::{init_encoder, load_metadata, load_params, save_params, EncoderParams, TensorSpec};
pub use train::{mlm_loss_and_grads, prepare_sequences, train_mlm, LossTrace, TrainConfig};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence has no maskable token")]
    NothingToMask,
    #[error("empty batch")]
    EmptyBatch,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file does not match its config: {0}")]
    ShapeMismatch(String),
    #[error("malformed weight file: {0}")]
    Format(String),
}

impl From<crate::binfile::BinFileError> for EncoderError {
    fn from(e: crate::binfile::BinFileError) -> Self {
        match e {
            crate::binfile::BinFileError::Io { path, source } => EncoderError::Io { path, source },
            other => EncoderError::Format(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            num_heads: 12,
            hidden_size: 768,
            ffn_size: 3072,
            max_seq_len: 512,
            vocab_size: 5000,
            dropout: 0.1,
            mask_rate: 0.15,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// A small configuration that trains in seconds on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            hidden_size: 32,
            ffn_size: 128,
            max_seq_len: 128,
            vocab_size,
            dropout: 0.0,
            mask_rate: 0.15,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.num_heads == 0 || self.hidden_size == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ffn_size == 0 {
            return bad("ffn_size must be positive".into());
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.vocab_size < crate::tokenizer::FIRST_MERGE_ID as usize {
            return bad(format!("vocab_size {} cannot hold the byte and special tokens", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} outside (0, 1)", self.mask_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}
