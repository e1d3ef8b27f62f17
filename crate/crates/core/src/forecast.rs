//! Autoregressive visit generation under greedy decoding, plus the
//! per-step top-N candidate sets that feed the zero-shot confusion
//! metrics.
//!
//! Generation follows the single greedy path (argmax at every step, ties
//! broken by ascending token id). Predicted elapsed time is accumulated
//! from generated time tokens using each bucket's conservative lower
//! bound, so a forecast is only cut off once it provably falls outside
//! the horizon.

use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::vocab::Vocabulary;

/// Default cap on generated tokens per forecast.
pub const DEFAULT_TOKEN_BUDGET: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Sep,
    TokenBudget,
    Horizon,
}

#[derive(Debug, Clone)]
pub struct ForecastStep {
    /// The token actually taken on the greedy path.
    pub greedy: u32,
    /// Top-N candidates, descending probability, ties by ascending id.
    pub candidates: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct ForecastSet {
    pub steps: Vec<ForecastStep>,
    pub terminated_by: Termination,
    /// Lower bound (days) on the elapsed time implied by generated time
    /// tokens when generation stopped.
    pub elapsed_lower_bound_days: u32,
}

#[derive(Debug, Clone)]
pub struct GeneratedVisit {
    /// Content of the generated visit; the closing [SEP] is excluded.
    pub tokens: Vec<u32>,
    pub terminated_by: Termination,
}

/// Top-`n` candidates of a distribution: descending probability, ties by
/// ascending token id.
pub fn top_n(dist: &[f64], n: usize) -> Vec<(u32, f64)> {
    let mut ranked: Vec<(u32, f64)> = dist
        .iter()
        .enumerate()
        .map(|(id, &p)| (id as u32, p))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite probabilities")
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(n);
    ranked
}

/// Drops the oldest complete visit from an encoded prefix, keeping the
/// three demographic tokens; the new first visit loses its time token.
fn slide_window(tokens: &mut Vec<u32>, vocab: &Vocabulary) {
    let sep = vocab.specials.sep;
    match tokens[3..].iter().position(|&t| t == sep) {
        Some(offset) => {
            let sep_idx = 3 + offset;
            tokens.drain(3..=sep_idx);
            if tokens.len() > 3 && vocab.time_bucket_of(tokens[3]).is_some() {
                tokens.remove(3);
            }
        }
        None => {
            // One open visit larger than the context; drop its oldest
            // content token.
            if tokens.len() > 4 {
                tokens.remove(4);
            } else {
                tokens.remove(tokens.len() - 1);
            }
        }
    }
}

fn fit_to_context(
    tokens: &mut Vec<u32>,
    predictor: &dyn Predictor,
    vocab: &Vocabulary,
) -> Result<()> {
    if let Some(limit) = predictor.context_limit() {
        if limit < 8 {
            return Err(Error::Config(format!(
                "predictor context of {limit} tokens is too small to decode into"
            )));
        }
        while tokens.len() >= limit {
            slide_window(tokens, vocab);
        }
    }
    Ok(())
}

/// Greedy generation until a [SEP] is produced or `budget` tokens have
/// been generated. The prefix must end at a visit boundary. Context
/// overflow is handled by sliding-window re-encoding, never an error.
pub fn generate_visit(
    predictor: &dyn Predictor,
    prefix: &[u32],
    vocab: &Vocabulary,
    budget: usize,
) -> Result<GeneratedVisit> {
    let mut current = prefix.to_vec();
    let mut tokens = Vec::new();
    for _ in 0..budget {
        fit_to_context(&mut current, predictor, vocab)?;
        let dist = predictor.predict_next(&current)?;
        let greedy = top_n(&dist, 1)[0].0;
        if greedy == vocab.specials.sep {
            return Ok(GeneratedVisit {
                tokens,
                terminated_by: Termination::Sep,
            });
        }
        tokens.push(greedy);
        current.push(greedy);
    }
    Ok(GeneratedVisit {
        tokens,
        terminated_by: Termination::TokenBudget,
    })
}

/// Walks the greedy path recording the top-`n` candidate set at every
/// step. Generation crosses visit boundaries and stops once the elapsed
/// lower bound implied by generated time tokens exceeds `horizon_days`,
/// or after `budget` steps.
pub fn top_n_sets(
    predictor: &dyn Predictor,
    prefix: &[u32],
    vocab: &Vocabulary,
    n: usize,
    horizon_days: u32,
    budget: usize,
) -> Result<ForecastSet> {
    if n < 1 {
        return Err(Error::Config("top-N requires N >= 1".into()));
    }
    let mut current = prefix.to_vec();
    let mut steps = Vec::new();
    let mut elapsed: u32 = 0;
    for _ in 0..budget {
        fit_to_context(&mut current, predictor, vocab)?;
        let dist = predictor.predict_next(&current)?;
        let candidates = top_n(&dist, n);
        let greedy = candidates[0].0;
        steps.push(ForecastStep { greedy, candidates });
        current.push(greedy);
        if let Some(bucket) = vocab.time_bucket_of(greedy) {
            elapsed = elapsed.saturating_add(bucket.lower_bound_days());
            if elapsed > horizon_days {
                return Ok(ForecastSet {
                    steps,
                    terminated_by: Termination::Horizon,
                    elapsed_lower_bound_days: elapsed,
                });
            }
        }
    }
    Ok(ForecastSet {
        steps,
        terminated_by: Termination::TokenBudget,
        elapsed_lower_bound_days: elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClinicalEvent, Domain, PatientRecord, Sex, Visit, VisitType};
    use crate::model::ScriptedPredictor;
    use crate::vocab::{build_vocabulary, IcdMap};

    /// Vocabulary over a handful of diagnosis codes.
    fn fixture_vocab() -> Vocabulary {
        let date: chrono::NaiveDate = "2020-01-01".parse().unwrap();
        let events = ["A00", "B11", "C22", "D33"]
            .iter()
            .map(|c| ClinicalEvent {
                domain: Domain::Diagnosis,
                code: c.to_string(),
                value: None,
                timestamp: date,
            })
            .collect();
        let patient = PatientRecord {
            patient_id: "P0".into(),
            birth_year: 1970,
            sex: Sex::Other,
            visits: vec![Visit {
                visit_id: "V0".into(),
                start_date: date,
                visit_type: VisitType::Outpatient,
                discharge_type: None,
                events,
            }],
        };
        build_vocabulary(std::slice::from_ref(&patient), &IcdMap::empty(), 0.0)
            .unwrap()
            .vocabulary
    }

    fn dx(vocab: &Vocabulary, code: &str) -> u32 {
        vocab.token_id(&format!("DX:{code}")).unwrap()
    }

    #[test]
    fn immediate_sep_gives_empty_visit() {
        let vocab = fixture_vocab();
        let predictor = ScriptedPredictor::emitting(vocab.len(), 1, &[vocab.specials.sep]);
        let out = generate_visit(&predictor, &[vocab.specials.cls], &vocab, 16).unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(out.terminated_by, Termination::Sep);
    }

    #[test]
    fn scripted_cycle_generates_both_tokens() {
        let vocab = fixture_vocab();
        let a = dx(&vocab, "A00");
        let b = dx(&vocab, "B11");
        let predictor =
            ScriptedPredictor::emitting(vocab.len(), 1, &[a, b, vocab.specials.sep]);
        let out = generate_visit(&predictor, &[vocab.specials.cls], &vocab, 16).unwrap();
        assert_eq!(out.tokens, vec![a, b]);
        assert_eq!(out.terminated_by, Termination::Sep);
    }

    #[test]
    fn budget_caps_generation() {
        let vocab = fixture_vocab();
        let a = dx(&vocab, "A00");
        let predictor = ScriptedPredictor::emitting(vocab.len(), 1, &[a]);
        let out = generate_visit(&predictor, &[vocab.specials.cls], &vocab, 2).unwrap();
        assert_eq!(out.tokens.len(), 2);
        assert_eq!(out.terminated_by, Termination::TokenBudget);
    }

    #[test]
    fn top_n_orders_by_probability_then_id() {
        let dist = vec![0.5, 0.3, 0.2];
        assert_eq!(top_n(&dist, 2), vec![(0, 0.5), (1, 0.3)]);
        // ties broken by ascending id
        let tied = vec![0.25, 0.25, 0.5];
        assert_eq!(top_n(&tied, 3), vec![(2, 0.5), (0, 0.25), (1, 0.25)]);
        // N >= vocab returns everything
        assert_eq!(top_n(&dist, 10).len(), 3);
    }

    #[test]
    fn horizon_stops_after_crossing_time_token() {
        let vocab = fixture_vocab();
        let t1 = vocab.specials.time[1];
        let predictor =
            ScriptedPredictor::emitting(vocab.len(), 1, &[vocab.specials.sep, t1, 0]);
        let out = top_n_sets(&predictor, &[vocab.specials.cls], &vocab, 2, 90, 32).unwrap();
        // [SEP] then [T1]; t1's lower bound (93) exceeds the 90-day horizon.
        assert_eq!(out.steps.len(), 2);
        assert_eq!(out.terminated_by, Termination::Horizon);
        assert_eq!(out.elapsed_lower_bound_days, 93);
        assert_eq!(out.steps[1].greedy, t1);
    }

    #[test]
    fn t0_accumulates_nothing() {
        let vocab = fixture_vocab();
        let t0 = vocab.specials.time[0];
        let a = dx(&vocab, "A00");
        let predictor = ScriptedPredictor::emitting(vocab.len(), 1, &[t0, a, t0, a]);
        let out = top_n_sets(&predictor, &[vocab.specials.cls], &vocab, 1, 90, 4).unwrap();
        assert_eq!(out.terminated_by, Termination::TokenBudget);
        assert_eq!(out.elapsed_lower_bound_days, 0);
    }

    #[test]
    fn top_sets_nest_and_contain_greedy() {
        let vocab = fixture_vocab();
        let v = vocab.len();
        // An arbitrary fixed distribution.
        let mut dist = vec![0.0; v];
        for (i, p) in dist.iter_mut().enumerate() {
            *p = ((i * 7 + 3) % 11) as f64 + 1.0;
        }
        let total: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= total);
        let predictor = ScriptedPredictor::new(v, 1, vec![dist]);
        let prefix = [vocab.specials.cls];
        for n in 1..6 {
            let smaller = top_n_sets(&predictor, &prefix, &vocab, n, 365, 3).unwrap();
            let larger = top_n_sets(&predictor, &prefix, &vocab, n + 1, 365, 3).unwrap();
            for (s, l) in smaller.steps.iter().zip(larger.steps.iter()) {
                assert_eq!(s.greedy, l.greedy);
                assert!(s.candidates.iter().any(|(id, _)| *id == s.greedy));
                let small_ids: Vec<u32> = s.candidates.iter().map(|(id, _)| *id).collect();
                let large_ids: Vec<u32> = l.candidates.iter().map(|(id, _)| *id).collect();
                assert!(small_ids.iter().all(|id| large_ids.contains(id)));
            }
        }
    }

    /// Predictor with a tiny context to exercise window sliding.
    struct TinyContext {
        inner: ScriptedPredictor,
        limit: usize,
    }

    impl Predictor for TinyContext {
        fn vocab_size(&self) -> usize {
            self.inner.vocab_size()
        }
        fn predict_next(&self, prefix: &[u32]) -> Result<Vec<f64>> {
            assert!(prefix.len() <= self.limit, "window was not slid");
            self.inner.predict_next(&prefix[prefix.len().min(1)..])
        }
        fn context_limit(&self) -> Option<usize> {
            Some(self.limit)
        }
    }

    #[test]
    fn context_overflow_slides_oldest_visit_out() {
        let vocab = fixture_vocab();
        let a = dx(&vocab, "A00");
        let b = dx(&vocab, "B11");
        let sep = vocab.specials.sep;
        let vt = vocab.visit_type_token(VisitType::Outpatient);
        let t0 = vocab.specials.time[0];
        // [CLS][AGE][SEX] [VT a SEP] [T0 VT b SEP]
        let age = vocab.specials.age[8];
        let sex = vocab.specials.sex[0];
        let prefix = vec![vocab.specials.cls, age, sex, vt, a, sep, t0, vt, b, sep];
        let predictor = TinyContext {
            inner: ScriptedPredictor::emitting(vocab.len(), 0, &[a]),
            limit: 9,
        };
        // Prefix has 10 tokens >= limit 9, so the oldest visit must slide
        // out before the first prediction.
        let out = generate_visit(&predictor, &prefix, &vocab, 1).unwrap();
        assert_eq!(out.tokens, vec![a]);
    }
}
