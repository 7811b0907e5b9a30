//! BERT-style transformer encoder with hand-written reverse mode.
//!
//! Hidden states are stored flat as a `(batch * width, hidden_dim)` matrix,
//! row `b * width + t` holding token `t` of sequence `b`.

mod checkpoint;
mod forward;
mod optim;
mod params;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, TrainingState};
pub use forward::{backward, backward_traced, embeddings, forward, forward_from, layer_from, layer_inputs, Forward, LayerPart};
pub(crate) use forward::linear_backward;
pub use optim::{adam_step, lr_at, AdamConfig, AdamState};
pub use params::{EncoderParams, LayerParams, MlmHead, MtrHead, Params};
pub use pool::{pool, pool_backward, Pooling};

/// Float type the encoder runs in: `f32` for training, `f64` for gradient
/// checks.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LnPlacement {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from this seed.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    /// Dropout after the ReLU of the MTR head.
    pub head_dropout: f64,
    pub ln_placement: LnPlacement,
    pub init_std: f64,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            hidden_dim: 128,
            ff_dim: 256,
            max_len: 128,
            vocab_size: 512,
            dropout_rate: 0.1,
            head_dropout: 0.1,
            ln_placement: LnPlacement::Pre,
            init_std: 0.02,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        EncoderConfig {
            layers: 12,
            heads: 12,
            hidden_dim: 768,
            ff_dim: 3072,
            vocab_size: 4096,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.hidden_dim == 0 || self.ff_dim == 0 {
            return bad("layers, heads, hidden_dim and ff_dim must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!("hidden_dim {} not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS as usize {
            return bad("vocab_size must exceed the special tokens".into());
        }
        for p in [self.dropout_rate, self.head_dropout] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Parameter count of the encoder body (heads excluded).
    pub fn encoder_parameter_count(&self) -> usize {
        let (d, f) = (self.hidden_dim, self.ff_dim);
        let layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        (self.vocab_size + self.max_len) * d + self.layers * layer + 2 * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let p = EncoderConfig::paper();
        assert_eq!((p.layers, p.heads, p.hidden_dim, p.ff_dim, p.max_len, p.vocab_size), (12, 12, 768, 3072, 128, 4096));
        let d = EncoderConfig::desk();
        assert_eq!((d.layers, d.heads, d.hidden_dim, d.ff_dim, d.max_len, d.vocab_size), (2, 4, 128, 256, 128, 512));
        assert!(p.validate().is_ok() && d.validate().is_ok());
        let bad = EncoderConfig { heads: 5, ..d };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parameter_count_matches_allocation() {
        let cfg = EncoderConfig::desk();
        let p = EncoderParams::<f32>::init(&cfg);
        let n: usize = p.named_slices().iter().map(|(_, s)| s.len()).sum();
        assert_eq!(n, cfg.encoder_parameter_count());
    }
}
