//! Visit-level precision/recall: the first k visits are encoded, the
//! (k+1)-th visit is generated under greedy decoding and the deduplicated
//! content token sets are compared.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::corpus::{Domain, PatientRecord};
use crate::error::{Error, Result};
use crate::forecast::generate_visit;
use crate::model::Predictor;
use crate::sequencer::{encode_patient, visit_content_tokens, CONTEXT_TOKENS};
use crate::vocab::{IcdMap, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainEval {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// One predicted visit compared against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitEval {
    pub patient_id: String,
    /// 0-based index of the predicted visit within the record.
    pub target_visit: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub per_domain: [DomainEval; 4],
}

fn set_eval(predicted: &BTreeSet<u32>, actual: &BTreeSet<u32>) -> (usize, usize, usize) {
    let tp = predicted.intersection(actual).count();
    (tp, predicted.len() - tp, actual.len() - tp)
}

/// Stepwise forecasting over one patient: for every k ≥ 1, the first k
/// visits are input and visit k+1 is generated and scored. Single-visit
/// patients produce no entries (the caller counts them as skipped).
pub fn visit_level_eval(
    predictor: &dyn Predictor,
    patient: &PatientRecord,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    budget: usize,
) -> Result<Vec<VisitEval>> {
    let limit = predictor
        .context_limit()
        .unwrap_or(CONTEXT_TOKENS)
        .min(CONTEXT_TOKENS);
    let mut results = Vec::new();
    for k in 1..patient.visits.len() {
        let history = PatientRecord {
            patient_id: patient.patient_id.clone(),
            birth_year: patient.birth_year,
            sex: patient.sex,
            visits: patient.visits[..k].to_vec(),
        };
        let seq = encode_patient(&history, vocab, mapping, None, limit)?;
        let generated = generate_visit(predictor, &seq.token_ids, vocab, budget)?;

        let predicted: BTreeSet<u32> = generated
            .tokens
            .iter()
            .copied()
            .filter(|&id| vocab.is_content(id))
            .collect();
        let actual: BTreeSet<u32> = visit_content_tokens(&patient.visits[k], vocab, mapping)
            .into_iter()
            .collect();

        let (tp, fp, fn_count) = set_eval(&predicted, &actual);
        let precision = if predicted.is_empty() {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if actual.is_empty() {
            0.0
        } else {
            tp as f64 / (tp + fn_count) as f64
        };

        let per_domain = Domain::ALL.map(|domain| {
            let pred_d: BTreeSet<u32> = predicted
                .iter()
                .copied()
                .filter(|&id| vocab.domain_of(id) == Some(domain))
                .collect();
            let actual_d: BTreeSet<u32> = actual
                .iter()
                .copied()
                .filter(|&id| vocab.domain_of(id) == Some(domain))
                .collect();
            let (tp_d, fp_d, fn_d) = set_eval(&pred_d, &actual_d);
            DomainEval {
                precision: match (pred_d.is_empty(), actual_d.is_empty()) {
                    (true, true) => None,
                    (true, false) => Some(0.0),
                    _ => Some(tp_d as f64 / (tp_d + fp_d) as f64),
                },
                recall: if actual_d.is_empty() {
                    None
                } else {
                    Some(tp_d as f64 / (tp_d + fn_d) as f64)
                },
            }
        });

        results.push(VisitEval {
            patient_id: patient.patient_id.clone(),
            target_visit: k,
            tp,
            fp,
            fn_count,
            precision,
            recall,
            per_domain,
        });
    }
    Ok(results)
}

/// Kahan-compensated mean.
fn kahan_mean<I: Iterator<Item = f64>>(values: I) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut count = 0usize;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainAggregate {
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub n_visits: usize,
    pub per_domain: [DomainAggregate; 4],
}

/// Unweighted mean over all evaluated (patient, visit) pairs, with a
/// per-domain breakdown over the visits where that domain is defined.
pub fn aggregate_metrics(evals: &[VisitEval]) -> Result<AggregateMetrics> {
    if evals.is_empty() {
        return Err(Error::Data("no evaluated visits to aggregate".into()));
    }
    let mean_precision = kahan_mean(evals.iter().map(|e| e.precision)).expect("nonempty");
    let mean_recall = kahan_mean(evals.iter().map(|e| e.recall)).expect("nonempty");
    let per_domain = Domain::ALL.map(|domain| {
        let idx = domain as usize;
        let precisions: Vec<f64> = evals
            .iter()
            .filter_map(|e| e.per_domain[idx].precision)
            .collect();
        let recalls: Vec<f64> = evals
            .iter()
            .filter_map(|e| e.per_domain[idx].recall)
            .collect();
        DomainAggregate {
            mean_precision: kahan_mean(precisions.iter().copied()),
            mean_recall: kahan_mean(recalls.iter().copied()),
            evaluated: precisions.len().max(recalls.len()),
        }
    });
    Ok(AggregateMetrics {
        mean_precision,
        mean_recall,
        n_visits: evals.len(),
        per_domain,
    })
}

#[derive(Debug, Clone)]
pub struct CorpusEval {
    pub visits: Vec<VisitEval>,
    pub skipped_single_visit: usize,
    pub metrics: AggregateMetrics,
}

/// Visit-level evaluation over a whole corpus (parallel per patient,
/// deterministic ordering).
pub fn eval_corpus(
    predictor: &dyn Predictor,
    corpus: &[PatientRecord],
    vocab: &Vocabulary,
    mapping: &IcdMap,
    budget: usize,
) -> Result<CorpusEval> {
    let per_patient: Vec<Result<Vec<VisitEval>>> = corpus
        .par_iter()
        .map(|patient| visit_level_eval(predictor, patient, vocab, mapping, budget))
        .collect();
    let mut visits = Vec::new();
    let mut skipped = 0usize;
    for result in per_patient {
        let evals = result?;
        if evals.is_empty() {
            skipped += 1;
        }
        visits.extend(evals);
    }
    let metrics = aggregate_metrics(&visits)?;
    Ok(CorpusEval {
        visits,
        skipped_single_visit: skipped,
        metrics,
    })
}
