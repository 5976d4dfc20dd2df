//! Deep-and-narrow encoder-decoder Transformer: vocabulary, forward pass,
//! teacher-forced training, checkpoints and parameter accounting.

pub mod train;
pub mod transformer;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use train::{train, training_pairs, Optimizer, TrainConfig, TrainReport, TrainingPair};
pub use transformer::Seq2SeqModel;
pub use vocab::{TokenId, Vocabulary, EOS, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    /// Feed-forward inner dimension.
    pub w: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    /// Longest encoder or decoder sequence.
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 512,
            w: 16,
            enc_layers: 6,
            dec_layers: 6,
            heads: 8,
            max_len: 24,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small shape for tests and laptop runs.
    pub fn desk() -> Self {
        ModelConfig {
            d: 64,
            w: 16,
            enc_layers: 2,
            dec_layers: 2,
            heads: 8,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model width {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.w == 0 {
            return Err(Error::Config("feed-forward width w must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Exactly the parameters this crate builds.
    Actual,
    /// The reference pretrained layout: scale-only norms, no learned
    /// positions, relative-position bias tables of 32 buckets per head.
    T5Compatible,
}

const RELATIVE_BUCKETS: u64 = 32;

/// Closed-form parameter count.
pub fn param_count(config: &ModelConfig, vocab_size: usize, accounting: Accounting) -> u64 {
    let d = config.d as u64;
    let w = config.w as u64;
    let enc = config.enc_layers as u64;
    let dec = config.dec_layers as u64;
    let v = vocab_size as u64;
    let attn = 4 * d * d;
    let ff = 2 * d * w;
    match accounting {
        Accounting::Actual => {
            let norm = 2 * d;
            v * d
                + 2 * config.max_len as u64 * d
                + enc * (attn + ff + 2 * norm)
                + dec * (2 * attn + ff + 3 * norm)
                + 2 * norm
        }
        Accounting::T5Compatible => {
            v * d
                + enc * (attn + ff + 2 * d)
                + dec * (2 * attn + ff + 3 * d)
                + 2 * d
                + 2 * RELATIVE_BUCKETS * config.heads as u64
        }
    }
}
