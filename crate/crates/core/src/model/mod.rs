//! Decoder-only transformer causal language model, written from scratch:
//! forward pass with cached attention maps, exact manual backward pass,
//! AdamW training loop and a finite-difference gradient gate.
//!
//! Training runs in `f32`; `f64` is used only inside the gradient check.

mod adamw;
mod bigram;
mod checkpoint;
mod forward;
mod gradcheck;
mod params;
mod predictor;
mod train;

pub use adamw::{adamw_update_scalar, AdamW, AdamWParams};
pub use bigram::BigramPredictor;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    embed, forward, lm_loss, loss_and_grads, predict_next, ForwardOutput, Mode,
};
pub use gradcheck::{check_batch, grad_check, grad_check_against, GradCheckReport, TensorCheck, GRAD_CHECK_INIT_SCALE, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
pub use params::{Parameters, Scalar};
pub use predictor::{softmax_f64, Predictor, ScriptedPredictor, TransformerPredictor, UniformPredictor};
pub use train::{train, write_loss_log, Precision, TrainConfig, TrainRun};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Maximum sequence length including the leading [CLS].
    pub context: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-scale configuration (hidden size 384, 4 layers, 8 heads).
    pub fn full_scale(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 384,
            n_layers: 4,
            n_heads: 8,
            context: 513,
            vocab_size,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    /// Desk-scale configuration used by tests and the demo pipeline.
    pub fn desk_scale(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            context: 513,
            vocab_size,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    /// Tiny configuration for the gradient check.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            context: 12,
            vocab_size,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context < 2 {
            return Err(Error::Config("context must be at least 2".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
