//! Deterministic single-threaded training loop.
//!
//! Batch order is a seeded shuffle per epoch and dropout draws from a
//! dedicated sub-stream, so two runs with the same seeds produce bitwise
//! identical loss logs and checkpoints.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::adamw::{AdamW, AdamWParams};
use crate::model::checkpoint::Checkpoint;
use crate::model::forward::loss_and_grads;
use crate::model::gradcheck::{check_batch, grad_check, GRAD_CHECK_STEP};
use crate::model::params::Parameters;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Plain f32 training.
    F32,
    /// f32 training preceded by an f64 finite-difference gradient gate on
    /// a tiny derived config; training aborts if the gate fails.
    F64Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            epochs: 2,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWParams {
        AdamWParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// (global step, mean batch loss)
    pub loss_log: Vec<(u64, f64)>,
    /// Set when training aborted on a non-finite loss; the checkpoint is
    /// then the last good per-epoch snapshot.
    pub diverged: bool,
}

/// Trains a fresh model on the given token sequences. `per_epoch` is
/// called with every epoch-end checkpoint (for persistence).
pub fn train(
    sequences: &[Vec<u32>],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut per_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<TrainRun> {
    model_config.validate()?;
    train_config.validate()?;
    let usable: Vec<&Vec<u32>> = sequences.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Data(
            "training dataset is empty (no sequence has at least two tokens)".into(),
        ));
    }

    if train_config.precision == Precision::F64Check {
        let mut gate_config = ModelConfig::tiny(11);
        gate_config.seed = 7;
        let report = grad_check(&gate_config, &check_batch(11), 16, GRAD_CHECK_STEP, 1)?;
        if !report.passed() {
            return Err(Error::Numeric(format!(
                "gradient gate failed (max rel err {:.3e}), offending tensors: {:?}",
                report.max_rel_err(),
                report.failing_tensors()
            )));
        }
    }

    let mut params = Parameters::<f32>::init(model_config);
    let mut optimizer = AdamW::new(model_config);
    let hp = train_config.adamw();

    // Named sub-streams of the training seed.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    dropout_rng.set_stream(2);

    let mut loss_log = Vec::new();
    let mut step: u64 = 0;
    let mut last_epoch_checkpoint: Option<Checkpoint> = None;

    for epoch in 0..train_config.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut shuffle_rng);

        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| usable[i].clone()).collect();
            // Non-finite loss or gradients abort with the last good
            // per-epoch checkpoint (initial weights when diverging in
            // the first epoch).
            let diverge = |loss_log: Vec<(u64, f64)>,
                           last: Option<Checkpoint>| TrainRun {
                checkpoint: last.unwrap_or_else(|| Checkpoint {
                    config: model_config.clone(),
                    step: 0,
                    params: Parameters::init(model_config),
                }),
                loss_log,
                diverged: true,
            };
            let (loss, grads) = match loss_and_grads(
                model_config,
                &params,
                &batch,
                Some(&mut dropout_rng),
            ) {
                Ok(result) => result,
                Err(Error::Numeric(_)) => {
                    return Ok(diverge(loss_log, last_epoch_checkpoint));
                }
                Err(other) => return Err(other),
            };
            if !loss.is_finite() {
                return Ok(diverge(loss_log, last_epoch_checkpoint));
            }
            step += 1;
            loss_log.push((step, loss));
            optimizer.step(&mut params, &grads, &hp);
        }

        let checkpoint = Checkpoint {
            config: model_config.clone(),
            step,
            params: params.clone(),
        };
        per_epoch(epoch, &checkpoint)?;
        last_epoch_checkpoint = Some(checkpoint);
    }

    Ok(TrainRun {
        checkpoint: last_epoch_checkpoint.expect("at least one epoch"),
        loss_log,
        diverged: false,
    })
}

/// Writes a loss log as CSV (`step,loss`).
pub fn write_loss_log(log: &[(u64, f64)], path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    writer
        .write_record(["step", "loss"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for (step, loss) in log {
        writer
            .write_record([step.to_string(), loss.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
