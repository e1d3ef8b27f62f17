//! Attention-based attribution for target-code forecasts and embedding
//! export for external projection tooling.
//!
//! Attribution reads self-attention at the emitting position whenever the
//! target is the top-1 forecast on the greedy path: the chosen layer's
//! row (averaged over heads) is restricted to observed-history positions,
//! the 15 heaviest input tokens are collected, and token frequencies are
//! aggregated over the cohort and normalized so the most frequent token
//! is exactly 1.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Axis;
use rayon::prelude::*;

use crate::corpus::PatientRecord;
use crate::error::{Error, Result};
use crate::eval::{icd_chapter, CohortSpec, ZeroShotOutcome};
use crate::model::{forward, Checkpoint};
use crate::sequencer::{encode_patient, CONTEXT_TOKENS};
use crate::vocab::{IcdMap, Vocabulary};

/// Input tokens inspected per firing step.
pub const TOP_ATTENDED: usize = 15;
/// Tokens reported after aggregation.
pub const REPORTED_TOKENS: usize = 10;

#[derive(Debug, Clone)]
pub struct AttributionReport {
    pub target_token: String,
    /// Which layer's attention was read (layer index, heads averaged).
    pub layer: usize,
    pub firing_steps: usize,
    pub patients_with_firing: usize,
    /// (token, raw count, frequency normalized to max = 1), most frequent
    /// first, at most [`REPORTED_TOKENS`] entries.
    pub top_tokens: Vec<(String, u64, f64)>,
    /// True when the target never fired anywhere in the cohort.
    pub empty: bool,
}

/// Top input positions of an attention row: weight descending, ties by
/// ascending position, at most `k` entries.
pub fn top_attended_positions(row: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("finite attention")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

struct FiringScan {
    counts: HashMap<String, u64>,
    steps: usize,
}

#[allow(clippy::too_many_arguments)]
fn scan_member(
    checkpoint: &Checkpoint,
    record: &PatientRecord,
    cutoff: chrono::NaiveDate,
    target_id: u32,
    layer: usize,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    horizon_days: u32,
    budget: usize,
) -> Result<FiringScan> {
    let config = &checkpoint.config;
    let limit = config.context.min(CONTEXT_TOKENS);
    let seq = encode_patient(record, vocab, mapping, Some(cutoff), limit)?;
    let input_len = seq.token_ids.len();
    let mut current = seq.token_ids;

    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut steps = 0usize;
    let mut elapsed = 0u32;
    for _ in 0..budget {
        if current.len() >= config.context {
            break;
        }
        let out = forward(config, &checkpoint.params, &[current.clone()], None)?;
        let logits = &out.logits[0];
        let last = logits.nrows() - 1;
        let row = logits.row(last);
        let mut greedy = 0u32;
        let mut best = f32::NEG_INFINITY;
        for (id, &l) in row.iter().enumerate() {
            if l > best {
                best = l;
                greedy = id as u32;
            }
        }

        if greedy == target_id {
            steps += 1;
            let maps = &out.attentions[0][layer];
            let heads = maps.dim().0;
            let mean_row: Vec<f32> = (0..current.len())
                .map(|j| {
                    (0..heads).map(|h| maps[[h, last, j]]).sum::<f32>() / heads as f32
                })
                .collect();
            let input_row = &mean_row[..input_len.min(mean_row.len())];
            for pos in top_attended_positions(input_row, TOP_ATTENDED) {
                let token = vocab
                    .token(current[pos])
                    .unwrap_or("<invalid>")
                    .to_string();
                *counts.entry(token).or_insert(0) += 1;
            }
        }

        current.push(greedy);
        if let Some(bucket) = vocab.time_bucket_of(greedy) {
            elapsed = elapsed.saturating_add(bucket.lower_bound_days());
            if elapsed > horizon_days {
                break;
            }
        }
    }
    Ok(FiringScan { counts, steps })
}

/// Attribution over a cohort for one target category (e.g. "C25").
/// `layer` selects which layer's attention to read; `None` means the
/// final layer.
#[allow(clippy::too_many_arguments)]
pub fn attribute(
    checkpoint: &Checkpoint,
    corpus: &[PatientRecord],
    cohort: &CohortSpec,
    target_code: &str,
    layer: Option<usize>,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    budget: usize,
) -> Result<AttributionReport> {
    let config = &checkpoint.config;
    let layer = layer.unwrap_or(config.n_layers - 1);
    if layer >= config.n_layers {
        return Err(Error::Config(format!(
            "attention layer {layer} out of range for {} layers",
            config.n_layers
        )));
    }
    let token = format!("DX:{target_code}");
    let target_id = vocab
        .token_id(&token)
        .ok_or_else(|| Error::Data(format!("target {token} not in vocabulary")))?;
    let by_id: HashMap<&str, &PatientRecord> = corpus
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect();

    let members: Vec<_> = cohort
        .positives
        .iter()
        .chain(cohort.negatives.iter())
        .collect();
    let scans: Vec<Result<Option<FiringScan>>> = members
        .par_iter()
        .map(|member| {
            let Some(record) = by_id.get(member.patient_id.as_str()) else {
                return Ok(None);
            };
            match scan_member(
                checkpoint,
                record,
                member.cutoff,
                target_id,
                layer,
                vocab,
                mapping,
                cohort.window_days,
                budget,
            ) {
                Ok(scan) => Ok(Some(scan)),
                Err(Error::EmptyHistory) => Ok(None),
                Err(other) => Err(other),
            }
        })
        .collect();

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut firing_steps = 0usize;
    let mut patients_with_firing = 0usize;
    for scan in scans {
        let Some(scan) = scan? else { continue };
        if scan.steps > 0 {
            patients_with_firing += 1;
        }
        firing_steps += scan.steps;
        for (token, count) in scan.counts {
            *counts.entry(token).or_insert(0) += count;
        }
    }

    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(REPORTED_TOKENS);
    let max = ranked.first().map(|(_, c)| *c).unwrap_or(0);
    let top_tokens: Vec<(String, u64, f64)> = ranked
        .into_iter()
        .map(|(token, count)| (token, count, count as f64 / max as f64))
        .collect();

    Ok(AttributionReport {
        target_token: token,
        layer,
        firing_steps,
        patients_with_firing,
        empty: firing_steps == 0,
        top_tokens,
    })
}

pub fn write_attribution_csv(report: &AttributionReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    writer
        .write_record(["token", "count", "normalized_frequency"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for (token, count, freq) in &report.top_tokens {
        writer
            .write_record([token.clone(), count.to_string(), freq.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeEmbeddingRow {
    pub code: String,
    pub chapter: String,
    pub vector: Vec<f32>,
}

#[derive(Debug)]
pub struct CodeEmbeddingExport {
    pub rows: Vec<CodeEmbeddingRow>,
    pub warnings: Vec<String>,
}

/// Input-embedding vectors of diagnosis code tokens, with their ICD
/// chapter. `filter`, when given, restricts the export to those
/// categories; unknown codes are skipped with a warning.
pub fn export_code_embeddings(
    checkpoint: &Checkpoint,
    vocab: &Vocabulary,
    filter: Option<&[String]>,
) -> CodeEmbeddingExport {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut emit = |category: &str| {
        let token = format!("DX:{category}");
        let Some(id) = vocab.token_id(&token) else {
            warnings.push(format!("code {category} not in vocabulary, skipped"));
            return;
        };
        let chapter = match icd_chapter(category) {
            Ok(chapter) => chapter.id(),
            Err(_) => {
                warnings.push(format!("code {category} maps to no chapter"));
                String::new()
            }
        };
        let vector = checkpoint
            .params
            .tok_emb
            .index_axis(Axis(0), id as usize)
            .to_vec();
        rows.push(CodeEmbeddingRow {
            code: category.to_string(),
            chapter,
            vector,
        });
    };
    match filter {
        Some(categories) => {
            for category in categories {
                emit(category);
            }
        }
        None => {
            for token in vocab.tokens() {
                if let Some(category) = token.strip_prefix("DX:") {
                    emit(category);
                }
            }
        }
    }
    CodeEmbeddingExport { rows, warnings }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientEmbeddingRow {
    pub patient_id: String,
    /// "TP" or "FP" by the zero-shot outcome at the chosen N.
    pub outcome: String,
    pub vector: Vec<f32>,
}

#[derive(Debug)]
pub struct PatientEmbeddingExport {
    pub rows: Vec<PatientEmbeddingRow>,
    pub missing_outcome: usize,
}

/// Mean-pooled embeddings of predicted-positive cohort members, labeled
/// TP or FP by the zero-shot outcome at `n`. Members without an outcome
/// are excluded and counted.
pub fn export_patient_embeddings(
    checkpoint: &Checkpoint,
    corpus: &[PatientRecord],
    outcomes: &[ZeroShotOutcome],
    n: usize,
    vocab: &Vocabulary,
    mapping: &IcdMap,
) -> Result<PatientEmbeddingExport> {
    let by_id: HashMap<&str, &PatientRecord> = corpus
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect();
    let limit = checkpoint.config.context.min(CONTEXT_TOKENS);
    let mut rows = Vec::new();
    let mut missing = 0usize;
    for outcome in outcomes {
        let detected = outcome.best_rank.is_some_and(|r| r <= n);
        if !detected {
            continue;
        }
        let Some(record) = by_id.get(outcome.patient_id.as_str()) else {
            missing += 1;
            continue;
        };
        let seq = encode_patient(record, vocab, mapping, Some(outcome.cutoff), limit)?;
        let hidden = crate::model::embed(&checkpoint.config, &checkpoint.params, &seq.token_ids)?;
        let n_rows = hidden.nrows() as f32;
        let vector: Vec<f32> = (0..hidden.ncols())
            .map(|j| hidden.column(j).sum() / n_rows)
            .collect();
        rows.push(PatientEmbeddingRow {
            patient_id: outcome.patient_id.clone(),
            outcome: if outcome.positive { "TP" } else { "FP" }.to_string(),
            vector,
        });
    }
    Ok(PatientEmbeddingExport {
        rows,
        missing_outcome: missing,
    })
}

/// CSV with one row per code/patient and one column per embedding
/// dimension; floats use shortest round-trip formatting.
pub fn write_embedding_csv<'a, I>(header: &str, rows: I, dim: usize, path: &Path) -> Result<()>
where
    I: Iterator<Item = (&'a str, &'a str, &'a [f32])>,
{
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "{header}")?;
    for j in 0..dim {
        write!(out, ",e{j}")?;
    }
    writeln!(out)?;
    for (a, b, vector) in rows {
        write!(out, "{a},{b}")?;
        for value in vector {
            write!(out, ",{value}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Parameters};

    #[test]
    fn top_attended_orders_by_weight_then_position() {
        let row = [0.1f32, 0.5, 0.2, 0.5, 0.05];
        assert_eq!(top_attended_positions(&row, 3), vec![1, 3, 2]);
        // Uniform attention: ascending positions.
        let uniform = [0.25f32; 4];
        assert_eq!(top_attended_positions(&uniform, 15), vec![0, 1, 2, 3]);
        // Fewer than k entries: all of them.
        assert_eq!(top_attended_positions(&row, 15).len(), 5);
    }

    #[test]
    fn top_attended_matches_brute_force_sort() {
        let row: Vec<f32> = (0..40)
            .map(|i| ((i * 31 + 7) % 17) as f32 / 17.0)
            .collect();
        let selected = top_attended_positions(&row, TOP_ATTENDED);
        let mut brute: Vec<usize> = (0..row.len()).collect();
        brute.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        assert_eq!(selected, brute[..TOP_ATTENDED]);
    }

    #[test]
    fn code_embedding_rows_are_bitwise_checkpoint_rows() {
        let corpus = {
            use crate::corpus::{ClinicalEvent, Domain, Sex, Visit, VisitType};
            let date: chrono::NaiveDate = "2020-01-01".parse().unwrap();
            vec![PatientRecord {
                patient_id: "P".into(),
                birth_year: 1970,
                sex: Sex::Male,
                visits: vec![Visit {
                    visit_id: "V".into(),
                    start_date: date,
                    visit_type: VisitType::Outpatient,
                    discharge_type: None,
                    events: ["C25", "F32"]
                        .iter()
                        .map(|c| ClinicalEvent {
                            domain: Domain::Diagnosis,
                            code: c.to_string(),
                            value: None,
                            timestamp: date,
                        })
                        .collect(),
                }],
            }]
        };
        let vocab = crate::vocab::build_vocabulary(&corpus, &IcdMap::empty(), 0.0)
            .unwrap()
            .vocabulary;
        let config = ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::tiny(vocab.len())
        };
        let checkpoint = Checkpoint {
            config: config.clone(),
            step: 0,
            params: Parameters::init(&config),
        };
        let export = export_code_embeddings(&checkpoint, &vocab, None);
        assert_eq!(export.rows.len(), 2);
        for row in &export.rows {
            let id = vocab.token_id(&format!("DX:{}", row.code)).unwrap();
            let expected = checkpoint.params.tok_emb.index_axis(Axis(0), id as usize);
            for (a, b) in row.vector.iter().zip(expected.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(export.rows[0].chapter, "C00-D49");
        assert_eq!(export.rows[1].chapter, "F01-F99");

        // Filtering to a single unknown code warns and yields no rows.
        let filtered =
            export_code_embeddings(&checkpoint, &vocab, Some(&["Z99".to_string()]));
        assert!(filtered.rows.is_empty());
        assert_eq!(filtered.warnings.len(), 1);
    }
}
