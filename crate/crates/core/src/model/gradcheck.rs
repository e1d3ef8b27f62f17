//! Finite-difference verification of the backward pass.
//!
//! Runs in f64 with dropout disabled, on a deliberately tiny model.
//! For sampled coordinates of every tensor the analytic gradient is
//! compared against central differences of the loss.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::forward::{batch_loss, loss_and_grads};
use crate::model::params::Parameters;
use crate::model::ModelConfig;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Weights for the check are drawn at 10x the training initialization
/// scale: near the training init, attention-score gradients are so small
/// that central differences bottom out in f64 round-off noise.
pub const GRAD_CHECK_INIT_SCALE: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat coordinate plus (analytic, finite-difference) at the worst spot.
    pub worst: (usize, f64, f64),
    pub sampled: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    /// Tensors sorted worst-first, for failure diagnostics.
    pub fn worst_offenders(&self, n: usize) -> Vec<&TensorCheck> {
        let mut sorted: Vec<&TensorCheck> = self.tensors.iter().collect();
        sorted.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
        sorted.into_iter().take(n).collect()
    }

    pub fn failing_tensors(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_err >= self.tolerance)
            .map(|t| t.name.as_str())
            .collect()
    }
}

fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs() + 1e-12)
}

fn require_tiny(config: &ModelConfig) -> Result<()> {
    config.validate()?;
    if config.n_layers > 2 || config.d_model > 16 || config.vocab_size > 11 || config.context > 12
    {
        return Err(Error::Config(
            "gradient check requires a tiny config (<= 2 layers, d_model 16, vocab 11, context 12)"
                .into(),
        ));
    }
    if config.dropout_rate != 0.0 {
        return Err(Error::Config(
            "gradient check requires dropout disabled".into(),
        ));
    }
    Ok(())
}

/// Central-difference check of the model's own backward pass.
pub fn grad_check(
    config: &ModelConfig,
    batch: &[Vec<u32>],
    samples_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    require_tiny(config)?;
    let params = Parameters::<f64>::init_scaled(config, GRAD_CHECK_INIT_SCALE);
    let (_, analytic) = loss_and_grads(config, &params, batch, None)?;
    grad_check_against(config, batch, &analytic, samples_per_tensor, h, seed)
}

/// Checks a supplied analytic gradient against finite differences of the
/// loss at the seeded initialization. Split out so mutation tests can
/// verify that a corrupted backward pass is caught and named.
pub fn grad_check_against(
    config: &ModelConfig,
    batch: &[Vec<u32>],
    analytic: &Parameters<f64>,
    samples_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    require_tiny(config)?;
    let mut params = Parameters::<f64>::init_scaled(config, GRAD_CHECK_INIT_SCALE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sizes: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();

    let mut tensors = Vec::with_capacity(sizes.len());
    for (idx, (name, size)) in sizes.iter().enumerate() {
        let coords: Vec<usize> = if *size <= samples_per_tensor {
            (0..*size).collect()
        } else {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < samples_per_tensor {
                set.insert(rng.random_range(0..*size));
            }
            set.into_iter().collect()
        };

        let mut max_rel_err = 0.0f64;
        let mut worst = (0usize, 0.0f64, 0.0f64);
        for &coord in &coords {
            let original = get_coord(&params, idx, coord);
            set_coord(&mut params, idx, coord, original + h);
            let loss_plus = batch_loss(config, &params, batch)?;
            set_coord(&mut params, idx, coord, original - h);
            let loss_minus = batch_loss(config, &params, batch)?;
            set_coord(&mut params, idx, coord, original);

            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let ana = get_coord(analytic, idx, coord);
            let rel = relative_error(ana, fd);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (coord, ana, fd);
            }
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_err,
            worst,
            sampled: coords.len(),
        });
    }

    Ok(GradCheckReport {
        tolerance: GRAD_CHECK_TOLERANCE,
        step: h,
        tensors,
    })
}

fn get_coord(params: &Parameters<f64>, tensor_idx: usize, coord: usize) -> f64 {
    *params.tensors()[tensor_idx]
        .1
        .iter()
        .nth(coord)
        .expect("coordinate in range")
}

fn set_coord(params: &mut Parameters<f64>, tensor_idx: usize, coord: usize, value: f64) {
    let mut tensors = params.tensors_mut();
    *tensors[tensor_idx]
        .1
        .iter_mut()
        .nth(coord)
        .expect("coordinate in range") = value;
}

/// Fixture batch used by the gradient-check tests and acceptance suite.
pub fn check_batch(vocab_size: u32) -> Vec<Vec<u32>> {
    let clamp = |ids: Vec<u32>| -> Vec<u32> {
        ids.into_iter().map(|i| i % vocab_size).collect()
    };
    vec![
        clamp(vec![0, 3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5]),
        clamp(vec![2, 7, 1, 8, 2, 8, 1, 8, 2, 8, 4, 6]),
        clamp(vec![10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, 10]),
        clamp(vec![1, 1, 2, 3, 5, 8, 2, 10, 1, 9, 0, 9]),
        clamp(vec![6, 2, 8, 3, 1, 8, 4, 5, 9, 0, 4, 5]),
        clamp(vec![3, 9, 9, 3, 7, 5, 1, 0, 6, 2, 8, 4]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut config = ModelConfig::tiny(11);
        config.seed = 7;
        let report = grad_check(&config, &check_batch(11), 16, GRAD_CHECK_STEP, 1).unwrap();
        assert!(
            report.passed(),
            "max rel err {} (worst: {:?})",
            report.max_rel_err(),
            report.worst_offenders(3)
        );
    }

    #[test]
    fn sign_flipped_backward_is_caught_and_named() {
        let mut config = ModelConfig::tiny(11);
        config.seed = 7;
        let params = Parameters::<f64>::init_scaled(&config, GRAD_CHECK_INIT_SCALE);
        let (_, mut grads) = loss_and_grads(&config, &params, &check_batch(11), None).unwrap();
        grads.layers[1].wv.mapv_inplace(|x| -x);
        let report =
            grad_check_against(&config, &check_batch(11), &grads, 8, GRAD_CHECK_STEP, 2).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing_tensors(), vec!["layer1.attn.wv"]);
    }

    #[test]
    fn error_curve_is_convex_in_log_h() {
        // Too-large h suffers discretization error, too-small h round-off;
        // the middle step should be at least as good as both ends.
        let mut config = ModelConfig::tiny(7);
        config.seed = 3;
        let batch = check_batch(7);
        let errs: Vec<f64> = [1e-3, 1e-5, 1e-7]
            .iter()
            .map(|&h| {
                grad_check(&config, &batch, 8, h, 4)
                    .unwrap()
                    .max_rel_err()
            })
            .collect();
        assert!(errs[1] <= errs[0] * 1.0001, "mid {} vs coarse {}", errs[1], errs[0]);
        assert!(errs[1] <= errs[2] * 1.0001, "mid {} vs fine {}", errs[1], errs[2]);
    }

    #[test]
    fn oversized_config_rejected() {
        let config = ModelConfig::desk_scale(100);
        assert!(grad_check(&config, &check_batch(100), 4, GRAD_CHECK_STEP, 0).is_err());
    }
}
