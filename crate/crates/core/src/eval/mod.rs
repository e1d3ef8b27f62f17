//! Zero-shot cohort construction and TP/FP/TN/FN@N evaluation, plus
//! visit-level precision/recall (see [`visit`]).
//!
//! A cohort pairs positives (patients whose first target occurrence lies
//! one prediction window past their cutoff) with negatives (patients
//! whose records never mention the target, cut off one window before
//! their last visit). A member counts as predicted-positive at N if any
//! target token appears in any step's top-N candidate set along the
//! greedy path within the horizon.

mod chapters;
mod visit;

pub use chapters::{
    chapter_by_id, evaluated_chapters, icd_chapter, Chapter, CHAPTERS, N_EVALUATED_CHAPTERS,
};
pub use visit::{
    aggregate_metrics, eval_corpus, visit_level_eval, AggregateMetrics, CorpusEval, DomainEval,
    VisitEval,
};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, PatientRecord};
use crate::error::{Error, Result};
use crate::forecast::top_n_sets;
use crate::model::Predictor;
use crate::sequencer::{encode_patient, CONTEXT_TOKENS};
use crate::vocab::{normalize_diagnosis, IcdMap, Vocabulary};

/// Default confusion-set sizes.
pub const DEFAULT_N_LIST: [usize; 4] = [1, 5, 10, 20];

/// What a cohort is trying to forecast: a set of 3-character diagnosis
/// categories, or a whole ICD chapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Codes(BTreeSet<String>),
    Chapter(&'static Chapter),
}

impl Target {
    pub fn codes<I: IntoIterator<Item = S>, S: Into<String>>(codes: I) -> Self {
        Target::Codes(codes.into_iter().map(Into::into).collect())
    }

    pub fn label(&self) -> String {
        match self {
            Target::Codes(codes) => codes.iter().cloned().collect::<Vec<_>>().join("+"),
            Target::Chapter(chapter) => chapter.id(),
        }
    }

    fn matches_category(&self, category: &str) -> bool {
        match self {
            Target::Codes(codes) => codes.contains(category),
            Target::Chapter(chapter) => chapter.contains(category),
        }
    }

    /// Vocabulary ids of all diagnosis tokens that count as this target.
    pub fn token_ids(&self, vocab: &Vocabulary) -> Result<BTreeSet<u32>> {
        let mut ids = BTreeSet::new();
        for (id, token) in vocab.tokens().iter().enumerate() {
            if let Some(category) = token.strip_prefix("DX:") {
                if self.matches_category(category) {
                    ids.insert(id as u32);
                }
            }
        }
        if ids.is_empty() {
            return Err(Error::Data(format!(
                "target {} matches no vocabulary code",
                self.label()
            )));
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub patient_id: String,
    pub cutoff: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct CohortSpec {
    pub target: Target,
    pub window_days: u32,
    pub min_history_visits: usize,
    pub positives: Vec<CohortMember>,
    pub negatives: Vec<CohortMember>,
}

/// First date any event of the record matches the target, scanning
/// normalized diagnosis categories.
fn first_target_date(
    record: &PatientRecord,
    target: &Target,
    mapping: &IcdMap,
) -> Option<NaiveDate> {
    let mut first: Option<NaiveDate> = None;
    for visit in &record.visits {
        for event in &visit.events {
            if event.domain != Domain::Diagnosis {
                continue;
            }
            let category = normalize_diagnosis(&event.code, mapping);
            if target.matches_category(&category) {
                let date = event.timestamp;
                if first.is_none_or(|f| date < f) {
                    first = Some(date);
                }
            }
        }
    }
    first
}

/// Builds the zero-shot cohort for a target and prediction window.
///
/// Positives: first target occurrence at date D, at least
/// `min_history_visits` visits dated on or before D − window; cutoff is
/// D − window. Negatives: no target code anywhere, cutoff anchored at
/// (last visit − window) with the same history requirement.
pub fn build_cohort(
    corpus: &[PatientRecord],
    target: Target,
    window_days: u32,
    min_history_visits: usize,
    vocab: &Vocabulary,
    mapping: &IcdMap,
) -> Result<CohortSpec> {
    if window_days == 0 {
        return Err(Error::Config("prediction window must be positive".into()));
    }
    target.token_ids(vocab)?;

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for record in corpus {
        let history_len = |cutoff: NaiveDate| {
            record
                .visits
                .iter()
                .filter(|v| v.start_date <= cutoff)
                .count()
        };
        match first_target_date(record, &target, mapping) {
            Some(first) => {
                let Some(cutoff) = first.checked_sub_days(Days::new(window_days as u64)) else {
                    continue;
                };
                if history_len(cutoff) >= min_history_visits {
                    positives.push(CohortMember {
                        patient_id: record.patient_id.clone(),
                        cutoff,
                    });
                }
            }
            None => {
                let last = record.visits.last().expect("records have visits").start_date;
                let Some(cutoff) = last.checked_sub_days(Days::new(window_days as u64)) else {
                    continue;
                };
                if history_len(cutoff) >= min_history_visits {
                    negatives.push(CohortMember {
                        patient_id: record.patient_id.clone(),
                        cutoff,
                    });
                }
            }
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Data(format!(
            "cohort for {} is empty on one side ({} positives, {} negatives)",
            target.label(),
            positives.len(),
            negatives.len()
        )));
    }
    Ok(CohortSpec {
        target,
        window_days,
        min_history_visits,
        positives,
        negatives,
    })
}

/// Cohort over a whole ICD chapter: identical to [`build_cohort`] with
/// every vocabulary code in the chapter as the target set.
pub fn chapter_task(
    corpus: &[PatientRecord],
    chapter: &'static Chapter,
    window_days: u32,
    min_history_visits: usize,
    vocab: &Vocabulary,
    mapping: &IcdMap,
) -> Result<CohortSpec> {
    build_cohort(
        corpus,
        Target::Chapter(chapter),
        window_days,
        min_history_visits,
        vocab,
        mapping,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_count: usize,
}

impl ConfusionRow {
    pub fn tp_pct(&self) -> f64 {
        100.0 * self.tp as f64 / (self.tp + self.fn_count).max(1) as f64
    }
    pub fn fn_pct(&self) -> f64 {
        100.0 * self.fn_count as f64 / (self.tp + self.fn_count).max(1) as f64
    }
    pub fn fp_pct(&self) -> f64 {
        100.0 * self.fp as f64 / (self.fp + self.tn).max(1) as f64
    }
    pub fn tn_pct(&self) -> f64 {
        100.0 * self.tn as f64 / (self.fp + self.tn).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub rows: Vec<ConfusionRow>,
    pub n_positives: usize,
    pub n_negatives: usize,
}

/// Per-member zero-shot outcome. `best_rank` is the smallest k such that
/// a target token appeared among the top-k candidates of some step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotOutcome {
    pub patient_id: String,
    pub positive: bool,
    pub cutoff: NaiveDate,
    pub best_rank: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ZeroShotRun {
    pub confusion: ConfusionCounts,
    pub outcomes: Vec<ZeroShotOutcome>,
    /// Members whose history could not be encoded, per side.
    pub excluded_positives: usize,
    pub excluded_negatives: usize,
}

impl ZeroShotRun {
    /// False-positive count at a given N (for matched-FP comparisons).
    pub fn fp_at(&self, n: usize) -> Option<usize> {
        self.confusion.rows.iter().find(|r| r.n == n).map(|r| r.fp)
    }
}

fn best_target_rank(
    predictor: &dyn Predictor,
    record: &PatientRecord,
    cutoff: NaiveDate,
    target_ids: &BTreeSet<u32>,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    max_n: usize,
    horizon_days: u32,
    budget: usize,
) -> Result<Option<usize>> {
    let limit = predictor
        .context_limit()
        .unwrap_or(CONTEXT_TOKENS)
        .min(CONTEXT_TOKENS);
    let seq = encode_patient(record, vocab, mapping, Some(cutoff), limit)?;
    let set = top_n_sets(predictor, &seq.token_ids, vocab, max_n, horizon_days, budget)?;
    let mut best: Option<usize> = None;
    for step in &set.steps {
        for (rank, (id, _)) in step.candidates.iter().enumerate() {
            if target_ids.contains(id) {
                let r = rank + 1;
                if best.is_none_or(|b| r < b) {
                    best = Some(r);
                }
                break;
            }
        }
    }
    Ok(best)
}

/// Runs the zero-shot protocol over a cohort: encode each member's
/// history up to its cutoff, walk the greedy path recording top-N
/// candidates within the window, and assemble TP/FP/TN/FN per N.
pub fn zero_shot_eval(
    predictor: &dyn Predictor,
    corpus: &[PatientRecord],
    cohort: &CohortSpec,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    n_list: &[usize],
    budget: usize,
) -> Result<ZeroShotRun> {
    if cohort.positives.is_empty() || cohort.negatives.is_empty() {
        return Err(Error::Data("cohort is empty on one side".into()));
    }
    if n_list.is_empty() || n_list.iter().any(|&n| n == 0) {
        return Err(Error::Config("n_list must contain positive sizes".into()));
    }
    let target_ids = cohort.target.token_ids(vocab)?;
    let max_n = *n_list.iter().max().expect("nonempty n_list");
    let by_id: HashMap<&str, &PatientRecord> = corpus
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect();

    let evaluate = |members: &[CohortMember], positive: bool| -> Result<(Vec<ZeroShotOutcome>, usize)> {
        let results: Vec<Result<Option<ZeroShotOutcome>>> = members
            .par_iter()
            .map(|member| {
                let Some(record) = by_id.get(member.patient_id.as_str()) else {
                    return Ok(None);
                };
                match best_target_rank(
                    predictor,
                    record,
                    member.cutoff,
                    &target_ids,
                    vocab,
                    mapping,
                    max_n,
                    cohort.window_days,
                    budget,
                ) {
                    Ok(best_rank) => Ok(Some(ZeroShotOutcome {
                        patient_id: member.patient_id.clone(),
                        positive,
                        cutoff: member.cutoff,
                        best_rank,
                    })),
                    Err(Error::EmptyHistory) => Ok(None),
                    Err(other) => Err(other),
                }
            })
            .collect();
        let mut outcomes = Vec::with_capacity(members.len());
        let mut excluded = 0;
        for result in results {
            match result? {
                Some(outcome) => outcomes.push(outcome),
                None => excluded += 1,
            }
        }
        Ok((outcomes, excluded))
    };

    let (mut outcomes, excluded_positives) = evaluate(&cohort.positives, true)?;
    let (negative_outcomes, excluded_negatives) = evaluate(&cohort.negatives, false)?;
    outcomes.extend(negative_outcomes);

    let n_positives = outcomes.iter().filter(|o| o.positive).count();
    let n_negatives = outcomes.len() - n_positives;
    let rows = n_list
        .iter()
        .map(|&n| {
            let detected =
                |o: &ZeroShotOutcome| o.best_rank.is_some_and(|r| r <= n);
            let tp = outcomes.iter().filter(|o| o.positive && detected(o)).count();
            let fp = outcomes.iter().filter(|o| !o.positive && detected(o)).count();
            ConfusionRow {
                n,
                tp,
                fp,
                tn: n_negatives - fp,
                fn_count: n_positives - tp,
            }
        })
        .collect();

    Ok(ZeroShotRun {
        confusion: ConfusionCounts {
            rows,
            n_positives,
            n_negatives,
        },
        outcomes,
        excluded_positives,
        excluded_negatives,
    })
}

/// One CSV per task: rows = N, columns = counts and per-side percentages.
pub fn write_confusion_csv(counts: &ConfusionCounts, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    writer
        .write_record([
            "n", "tp", "fp", "tn", "fn", "tp_pct", "fp_pct", "tn_pct", "fn_pct",
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    for row in &counts.rows {
        writer
            .write_record([
                row.n.to_string(),
                row.tp.to_string(),
                row.fp.to_string(),
                row.tn.to_string(),
                row.fn_count.to_string(),
                format!("{:.4}", row.tp_pct()),
                format!("{:.4}", row.fp_pct()),
                format!("{:.4}", row.tn_pct()),
                format!("{:.4}", row.fn_pct()),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
