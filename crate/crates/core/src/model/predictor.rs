//! Next-token predictor abstraction, so decoding and evaluation run
//! against the transformer, the bigram baseline, or scripted test
//! predictors interchangeably.

use crate::error::{Error, Result};

/// Behavioral contract: a probability vector over the vocabulary,
/// nonnegative and summing to 1 (± 1e-6).
pub trait Predictor: Sync {
    fn vocab_size(&self) -> usize;

    /// Distribution over the next token given a prefix of token ids.
    fn predict_next(&self, prefix: &[u32]) -> Result<Vec<f64>>;

    /// Longest prefix the predictor accepts, if bounded. Decoding slides
    /// its window to stay within this.
    fn context_limit(&self) -> Option<usize> {
        None
    }
}

/// The trained transformer as a [`Predictor`].
pub struct TransformerPredictor<'a> {
    checkpoint: &'a crate::model::Checkpoint,
}

impl<'a> TransformerPredictor<'a> {
    pub fn new(checkpoint: &'a crate::model::Checkpoint) -> Self {
        TransformerPredictor { checkpoint }
    }

    pub fn checkpoint(&self) -> &crate::model::Checkpoint {
        self.checkpoint
    }
}

impl Predictor for TransformerPredictor<'_> {
    fn vocab_size(&self) -> usize {
        self.checkpoint.config.vocab_size
    }

    fn predict_next(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        crate::model::predict_next(&self.checkpoint.config, &self.checkpoint.params, prefix)
    }

    fn context_limit(&self) -> Option<usize> {
        Some(self.checkpoint.config.context)
    }
}

/// Numerically stable softmax in f64.
pub fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Uniform distribution; the degenerate baseline.
pub struct UniformPredictor {
    pub vocab_size: usize,
}

impl Predictor for UniformPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict_next(&self, _prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.vocab_size as f64; self.vocab_size])
    }
}

/// Cycles through a fixed list of distributions, one per generation step,
/// keyed by prefix length. Used by decoding and evaluation tests.
pub struct ScriptedPredictor {
    vocab_size: usize,
    /// Distribution emitted at step k = prefix.len() - base_len.
    steps: Vec<Vec<f64>>,
    base_len: usize,
}

impl ScriptedPredictor {
    pub fn new(vocab_size: usize, base_len: usize, steps: Vec<Vec<f64>>) -> Self {
        assert!(steps.iter().all(|s| s.len() == vocab_size));
        ScriptedPredictor {
            vocab_size,
            steps,
            base_len,
        }
    }

    /// A predictor that deterministically emits `tokens` in order (prob 1
    /// on each), then keeps emitting the last one.
    pub fn emitting(vocab_size: usize, base_len: usize, tokens: &[u32]) -> Self {
        let steps = tokens
            .iter()
            .map(|&t| {
                let mut dist = vec![0.0; vocab_size];
                dist[t as usize] = 1.0;
                dist
            })
            .collect();
        Self::new(vocab_size, base_len, steps)
    }
}

impl Predictor for ScriptedPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict_next(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.len() < self.base_len {
            return Err(Error::Data("prefix shorter than the scripted base".into()));
        }
        let step = (prefix.len() - self.base_len).min(self.steps.len() - 1);
        Ok(self.steps[step].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax_f64(&[1.0, 2.0, 3.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }

    #[test]
    fn scripted_predictor_follows_steps() {
        let p = ScriptedPredictor::emitting(4, 2, &[3, 1]);
        assert_eq!(p.predict_next(&[0, 0]).unwrap()[3], 1.0);
        assert_eq!(p.predict_next(&[0, 0, 3]).unwrap()[1], 1.0);
        // sticks at the last step
        assert_eq!(p.predict_next(&[0, 0, 3, 1]).unwrap()[1], 1.0);
    }
}
