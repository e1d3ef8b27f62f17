//! Supervised comparison arm: a linear classification head trained on
//! frozen-backbone embeddings with class-balanced sampling, evaluated as
//! TP at a matched false-positive budget against the zero-shot run.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{adamw_update_scalar, AdamWParams, Checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Early-stop patience (epochs without validation improvement).
    pub patience: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 1e-4,
            dropout_rate: 0.1,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            patience: 5,
        }
    }
}

/// Arithmetic mean over rows.
pub fn mean_pool(rows: &Array2<f32>) -> Vec<f32> {
    let n = rows.nrows() as f32;
    (0..rows.ncols())
        .map(|j| rows.column(j).sum() / n)
        .collect()
}

/// Mean-pooled final-layer embedding of a token history. The backbone is
/// read-only; nothing in the probe path mutates the checkpoint.
pub fn patient_embedding(checkpoint: &Checkpoint, history: &[u32]) -> Result<Vec<f32>> {
    if history.is_empty() {
        return Err(Error::Data("cannot embed an empty history".into()));
    }
    let hidden = crate::model::embed(&checkpoint.config, &checkpoint.params, history)?;
    Ok(mean_pool(&hidden))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LinearHead {
    pub fn score(&self, embedding: &[f32]) -> f64 {
        let z: f32 = self
            .weights
            .iter()
            .zip(embedding)
            .map(|(w, x)| w * x)
            .sum::<f32>()
            + self.bias;
        z as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable binary cross-entropy with logits.
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

/// Trains a logistic head on frozen embeddings with inverse-frequency
/// class-balanced sampling and a seeded 10% validation split for early
/// stopping. Deterministic given the seed.
pub fn train_probe(
    embeddings: &[Vec<f32>],
    labels: &[bool],
    config: &ProbeConfig,
) -> Result<(LinearHead, Vec<(u64, f64)>)> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::Data("embeddings and labels must align and be nonempty".into()));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Data("embeddings have inconsistent dimensions".into()));
    }
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::Data("probe training requires both classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Seeded validation split (10%, at least one sample).
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = (labels.len() / 10).max(1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx: Vec<usize> = train_idx.to_vec();
    let positives: Vec<usize> = train_idx.iter().copied().filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = train_idx.iter().copied().filter(|&i| !labels[i]).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Data(
            "training split lost a class; use more data or another seed".into(),
        ));
    }

    let mut head = LinearHead {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut m = vec![0.0f64; dim + 1];
    let mut v = vec![0.0f64; dim + 1];
    let hp = AdamWParams {
        learning_rate: config.learning_rate,
        weight_decay: 0.0,
        ..AdamWParams::default()
    };

    let val_loss = |head: &LinearHead| -> f64 {
        let mut sum = 0.0;
        for &i in val_idx {
            let z = head.score(&embeddings[i]);
            sum += bce(z, f64::from(u8::from(labels[i])));
        }
        sum / val_idx.len() as f64
    };

    let steps_per_epoch = train_idx.len().div_ceil(config.batch_size);
    let keep = 1.0 - config.dropout_rate;
    let mut log = Vec::new();
    let mut step: u64 = 0;
    let mut best: Option<(f64, LinearHead)> = None;
    let mut stale = 0usize;

    for _epoch in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            // Class-balanced batch: each class equally likely, which
            // weights samples inversely to class frequency.
            let batch: Vec<usize> = (0..config.batch_size)
                .map(|_| {
                    let from_pos = rng.random::<f64>() < 0.5;
                    let pool = if from_pos { &positives } else { &negatives };
                    pool[rng.random_range(0..pool.len())]
                })
                .collect();

            let mut grad_w = vec![0.0f64; dim];
            let mut grad_b = 0.0f64;
            let mut loss_sum = 0.0f64;
            for &i in &batch {
                // Inverted dropout on the embedding during training.
                let x: Vec<f64> = embeddings[i]
                    .iter()
                    .map(|&e| {
                        if config.dropout_rate > 0.0 {
                            if rng.random::<f64>() < keep {
                                e as f64 / keep
                            } else {
                                0.0
                            }
                        } else {
                            e as f64
                        }
                    })
                    .collect();
                let z: f64 = head
                    .weights
                    .iter()
                    .zip(&x)
                    .map(|(&w, &xi)| w as f64 * xi)
                    .sum::<f64>()
                    + head.bias as f64;
                let y = f64::from(u8::from(labels[i]));
                loss_sum += bce(z, y);
                let dz = sigmoid(z) - y;
                for (g, xi) in grad_w.iter_mut().zip(&x) {
                    *g += dz * xi;
                }
                grad_b += dz;
            }
            let inv = 1.0 / batch.len() as f64;
            step += 1;
            log.push((step, loss_sum * inv));
            for (j, g) in grad_w.iter().enumerate() {
                let updated = adamw_update_scalar(
                    head.weights[j] as f64,
                    g * inv,
                    &mut m[j],
                    &mut v[j],
                    step,
                    &hp,
                    false,
                );
                head.weights[j] = updated as f32;
            }
            let updated = adamw_update_scalar(
                head.bias as f64,
                grad_b * inv,
                &mut m[dim],
                &mut v[dim],
                step,
                &hp,
                false,
            );
            head.bias = updated as f32;
        }

        let loss = val_loss(&head);
        match &best {
            Some((best_loss, _)) if loss >= *best_loss => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((loss, head.clone()));
                stale = 0;
            }
        }
    }

    let head = best.map(|(_, h)| h).unwrap_or(head);
    Ok((head, log))
}

/// True positives achievable at a false-positive budget: samples are
/// ranked by score (ties put negatives first, which is the conservative
/// choice) and the longest prefix with at most `fp_budget` false
/// positives is taken.
pub fn matched_fp_tp(scores: &[f64], labels: &[bool], fp_budget: usize) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Data("scores and labels must align".into()));
    }
    let n_negatives = labels.iter().filter(|&&l| !l).count();
    if fp_budget > n_negatives {
        return Err(Error::Data(format!(
            "false-positive budget {fp_budget} exceeds the {n_negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then_with(|| labels[a].cmp(&labels[b])) // negatives (false) first
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &i in &order {
        if labels[i] {
            tp += 1;
        } else {
            if fp + 1 > fp_budget {
                break;
            }
            fp += 1;
        }
    }
    Ok(tp)
}

/// Rank-based ROC AUC with midrank tie handling. `None` when a class is
/// missing.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn mean_pool_arithmetic() {
        let rows = arr2(&[[1.0f32, 3.0], [3.0, 5.0]]);
        assert_eq!(mean_pool(&rows), vec![2.0, 4.0]);
        let single = arr2(&[[7.0f32, -2.0]]);
        assert_eq!(mean_pool(&single), vec![7.0, -2.0]);
    }

    /// Two well-separated 2-D clusters.
    fn separable_data(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let positive = i % 2 == 0;
            let center: f32 = if positive { 2.0 } else { -2.0 };
            embeddings.push(vec![
                center + rng.random::<f32>() * 0.5,
                -center + rng.random::<f32>() * 0.5,
            ]);
            labels.push(positive);
        }
        (embeddings, labels)
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let (embeddings, labels) = separable_data(120, 3);
        let config = ProbeConfig {
            learning_rate: 5e-2,
            dropout_rate: 0.0,
            epochs: 40,
            seed: 1,
            ..ProbeConfig::default()
        };
        let (head, log) = train_probe(&embeddings, &labels, &config).unwrap();
        assert!(!log.is_empty());
        let correct = embeddings
            .iter()
            .zip(&labels)
            .filter(|(e, &l)| (head.score(e) > 0.0) == l)
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn same_seed_reproduces_head_exactly() {
        let (embeddings, labels) = separable_data(60, 9);
        let config = ProbeConfig {
            epochs: 5,
            seed: 42,
            ..ProbeConfig::default()
        };
        let (a, log_a) = train_probe(&embeddings, &labels, &config).unwrap();
        let (b, log_b) = train_probe(&embeddings, &labels, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn single_class_rejected() {
        let embeddings = vec![vec![1.0f32], vec![2.0]];
        assert!(train_probe(&embeddings, &[true, true], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn permuted_labels_give_chance_auc() {
        // Labels drawn independently of the embeddings: held-out AUC
        // should hover around 0.5 across seeds.
        let mut aucs = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let n = 400;
            let embeddings: Vec<Vec<f32>> = (0..n)
                .map(|_| vec![rng.random::<f32>(), rng.random::<f32>()])
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            let split = n / 2;
            let config = ProbeConfig {
                epochs: 10,
                seed,
                ..ProbeConfig::default()
            };
            let (head, _) = train_probe(&embeddings[..split], &labels[..split], &config).unwrap();
            let scores: Vec<f64> = embeddings[split..].iter().map(|e| head.score(e)).collect();
            aucs.push(auc(&scores, &labels[split..]).unwrap());
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((0.4..=0.6).contains(&mean), "null AUC {mean} ({aucs:?})");
    }

    #[test]
    fn matched_fp_tp_follows_the_worked_example() {
        // scores {pos: .9, .6; neg: .7, .1}
        let scores = vec![0.9, 0.6, 0.7, 0.1];
        let labels = vec![true, true, false, false];
        assert_eq!(matched_fp_tp(&scores, &labels, 1).unwrap(), 2);
        assert_eq!(matched_fp_tp(&scores, &labels, 0).unwrap(), 1);
        assert_eq!(matched_fp_tp(&scores, &labels, 2).unwrap(), 2);
        assert!(matched_fp_tp(&scores, &labels, 3).is_err());
    }

    #[test]
    fn matched_fp_tp_boundary_budgets() {
        // Perfectly separated scores: zero budget already yields all TPs.
        let scores = vec![0.9, 0.8, 0.2, 0.1];
        let labels = vec![true, true, false, false];
        assert_eq!(matched_fp_tp(&scores, &labels, 0).unwrap(), 2);
        // Full budget always yields all TPs regardless of separation.
        let scores = vec![0.1, 0.2, 0.8, 0.9];
        assert_eq!(matched_fp_tp(&scores, &labels, 2).unwrap(), 2);
    }

    #[test]
    fn tied_negatives_are_excluded_conservatively() {
        let scores = vec![0.7, 0.7];
        let labels = vec![true, false];
        // At budget 0 the tied negative blocks the tied positive.
        assert_eq!(matched_fp_tp(&scores, &labels, 0).unwrap(), 0);
        assert_eq!(matched_fp_tp(&scores, &labels, 1).unwrap(), 1);
    }

    #[test]
    fn tp_nondecreasing_in_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let n_neg = labels.iter().filter(|&&l| !l).count();
        let mut last = 0;
        for budget in 0..=n_neg {
            let tp = matched_fp_tp(&scores, &labels, budget).unwrap();
            assert!(tp >= last);
            last = tp;
        }
    }

    #[test]
    fn auc_sanity() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(auc(&[0.1, 0.9], &[true, false]), Some(0.0));
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.5, 0.6], &[true, true]), None);
    }
}
