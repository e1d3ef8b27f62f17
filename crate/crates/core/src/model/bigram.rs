//! Add-one-smoothed bigram baseline.
//!
//! A reference next-token model for exercising the decoding and evaluation
//! harness without a trained transformer: P(b | a) = (count(a,b) + 1) /
//! (count(a) + V). Unseen contexts reduce to the uniform distribution.

use std::collections::HashMap;

use crate::error::Result;
use crate::model::predictor::Predictor;

pub struct BigramPredictor {
    vocab_size: usize,
    follow_counts: HashMap<u32, HashMap<u32, u64>>,
    context_counts: HashMap<u32, u64>,
}

impl BigramPredictor {
    pub fn fit(sequences: &[Vec<u32>], vocab_size: usize) -> Self {
        let mut follow_counts: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
        let mut context_counts: HashMap<u32, u64> = HashMap::new();
        for seq in sequences {
            for pair in seq.windows(2) {
                *follow_counts
                    .entry(pair[0])
                    .or_default()
                    .entry(pair[1])
                    .or_insert(0) += 1;
                *context_counts.entry(pair[0]).or_insert(0) += 1;
            }
        }
        BigramPredictor {
            vocab_size,
            follow_counts,
            context_counts,
        }
    }
}

impl Predictor for BigramPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict_next(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let last = match prefix.last() {
            Some(&t) => t,
            None => {
                return Ok(vec![1.0 / self.vocab_size as f64; self.vocab_size]);
            }
        };
        let total = self.context_counts.get(&last).copied().unwrap_or(0) as f64;
        let denom = total + self.vocab_size as f64;
        let follows = self.follow_counts.get(&last);
        let probs = (0..self.vocab_size as u32)
            .map(|t| {
                let count = follows
                    .and_then(|m| m.get(&t).copied())
                    .unwrap_or(0) as f64;
                (count + 1.0) / denom
            })
            .collect();
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_one_smoothing_counts() {
        // Corpus "A B A B" with A=0, B=1, V=3. Adjacent pairs are
        // (0,1), (1,0), (0,1), so count(A->B)=2 and count(A)=2.
        let predictor = BigramPredictor::fit(&[vec![0, 1, 0, 1]], 3);
        let probs = predictor.predict_next(&[5, 0]).unwrap();
        assert!((probs[1] - (2.0 + 1.0) / (2.0 + 3.0)).abs() < 1e-12);
        assert!((probs[0] - 1.0 / 5.0).abs() < 1e-12);
        assert!((probs[2] - 1.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let predictor = BigramPredictor::fit(&[vec![0, 1]], 4);
        let probs = predictor.predict_next(&[3]).unwrap();
        for &p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let predictor = BigramPredictor::fit(&[vec![0, 1, 2, 0, 2, 1]], 5);
        for prefix in [vec![0], vec![1], vec![2], vec![4]] {
            let probs = predictor.predict_next(&prefix).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
