//! Patient timeline ↔ token sequence conversion.
//!
//! Layout: `[CLS] [AGE] [SEX]` then per visit
//! `[TT]? [VT] content+ [DT]? [SEP]`, where the time token is omitted for
//! the first emitted visit and the discharge token appears for inpatient
//! visits. Content tokens inside a visit are ordered by
//! (timestamp, domain d<m<p<l, token id).
//!
//! When an encoding exceeds the context window the oldest complete visits
//! are dropped (demographics always survive) and the first surviving visit
//! loses its time token.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{DischargeType, PatientRecord, Sex, VisitType};
use crate::error::{Error, Result};
use crate::vocab::{time_bucket, IcdMap, TimeBucket, Vocabulary};

/// Context window in tokens, including the leading `[CLS]`.
pub const CONTEXT_TOKENS: usize = 513;

pub const DATASET_FORMAT: &str = "ehrgpt.dataset";
pub const DATASET_VERSION: u32 = 1;

/// One patient's encoded timeline. The three lists are parallel: every
/// token carries its visit's start date and a nondecreasing visit ordinal
/// (0 for the demographic prefix).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub patient_id: String,
    pub token_ids: Vec<u32>,
    pub token_dates: Vec<NaiveDate>,
    pub visit_index: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Restricts a patient to visits dated on or before `cutoff`.
pub fn truncate_history_at(patient: &PatientRecord, cutoff: NaiveDate) -> Result<PatientRecord> {
    let visits: Vec<_> = patient
        .visits
        .iter()
        .filter(|v| v.start_date <= cutoff)
        .cloned()
        .collect();
    if visits.is_empty() {
        return Err(Error::EmptyHistory);
    }
    Ok(PatientRecord {
        patient_id: patient.patient_id.clone(),
        birth_year: patient.birth_year,
        sex: patient.sex,
        visits,
    })
}

/// Content token ids of one visit in canonical order:
/// (timestamp, domain d<m<p<l, token id).
pub fn visit_content_tokens(
    visit: &crate::corpus::Visit,
    vocab: &Vocabulary,
    mapping: &IcdMap,
) -> Vec<u32> {
    use crate::corpus::Domain;
    let mut events: Vec<(NaiveDate, Domain, u32)> = visit
        .events
        .iter()
        .map(|e| {
            let id = match e.domain {
                Domain::Diagnosis => vocab.diagnosis_token(&e.code, mapping),
                Domain::Medication => vocab.medication_token(&e.code),
                Domain::Procedure => vocab.procedure_token(&e.code),
                Domain::Lab => vocab.lab_token(&e.code, e.value.expect("lab value")),
            };
            (e.timestamp, e.domain, id)
        })
        .collect();
    events.sort();
    events.into_iter().map(|(_, _, id)| id).collect()
}

/// Tokens of one visit, excluding the leading time token.
fn visit_chunk(
    visit: &crate::corpus::Visit,
    vocab: &Vocabulary,
    mapping: &IcdMap,
) -> Vec<u32> {
    let events = visit_content_tokens(visit, vocab, mapping);
    let mut chunk = Vec::with_capacity(events.len() + 3);
    chunk.push(vocab.visit_type_token(visit.visit_type));
    chunk.extend(events);
    if let Some(dt) = visit.discharge_type {
        chunk.push(vocab.discharge_token(dt));
    }
    chunk.push(vocab.specials.sep);
    chunk
}

/// Encodes a patient (optionally truncated at `as_of`) into a token
/// sequence of at most `max_len` tokens.
pub fn encode_patient(
    patient: &PatientRecord,
    vocab: &Vocabulary,
    mapping: &IcdMap,
    as_of: Option<NaiveDate>,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len < 8 {
        return Err(Error::Config(format!(
            "context window of {max_len} tokens is too small to encode a visit"
        )));
    }
    let visits: Vec<_> = match as_of {
        Some(cutoff) => patient
            .visits
            .iter()
            .filter(|v| v.start_date <= cutoff)
            .collect(),
        None => patient.visits.iter().collect(),
    };
    if visits.is_empty() {
        return Err(Error::EmptyHistory);
    }

    let chunks: Vec<Vec<u32>> = visits
        .iter()
        .map(|v| visit_chunk(v, vocab, mapping))
        .collect();

    // Drop oldest whole visits until the assembly fits.
    let total_visits = visits.len();
    let mut start = total_visits;
    let mut budget_used = 3; // [CLS][AGE][SEX]
    for i in (0..total_visits).rev() {
        // Adding an older visit turns the previously-first visit into a
        // non-first one, which costs one extra time token.
        let cost = chunks[i].len() + usize::from(start != total_visits);
        if budget_used + cost > max_len {
            break;
        }
        budget_used += cost;
        start = i;
    }

    let mut kept_chunks: Vec<Vec<u32>> = chunks[start..].to_vec();
    if start == total_visits {
        // Even the newest visit alone does not fit: keep its head so the
        // grammar stays valid ([VT] content+ [DT]? [SEP]).
        start = total_visits - 1;
        let chunk = &chunks[start];
        let mut head: Vec<u32> = chunk[..max_len - 4].to_vec();
        head.push(vocab.specials.sep);
        kept_chunks = vec![head];
    }
    let kept_visits = &visits[start..];

    let first_date = kept_visits[0].start_date;
    let mut sequence = TokenSequence {
        patient_id: patient.patient_id.clone(),
        token_ids: Vec::with_capacity(max_len),
        token_dates: Vec::with_capacity(max_len),
        visit_index: Vec::with_capacity(max_len),
    };
    let push = |id: u32, date: NaiveDate, visit: u32, seq: &mut TokenSequence| {
        seq.token_ids.push(id);
        seq.token_dates.push(date);
        seq.visit_index.push(visit);
    };
    push(vocab.specials.cls, first_date, 0, &mut sequence);
    push(
        vocab.age_token(patient.birth_year, first_date),
        first_date,
        0,
        &mut sequence,
    );
    push(vocab.sex_token(patient.sex), first_date, 0, &mut sequence);

    let mut prev_date: Option<NaiveDate> = None;
    for (ordinal, (visit, chunk)) in kept_visits.iter().zip(kept_chunks.iter()).enumerate() {
        let date = visit.start_date;
        if let Some(prev) = prev_date {
            let bucket = time_bucket((date - prev).num_days())?;
            push(vocab.time_token(bucket), date, ordinal as u32 + 1, &mut sequence);
        }
        for id in chunk {
            push(*id, date, ordinal as u32 + 1, &mut sequence);
        }
        prev_date = Some(date);
    }

    debug_assert!(sequence.len() <= max_len);
    Ok(sequence)
}

/// One decoded visit: structural tokens plus the content ids in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedVisit {
    pub time_bucket: Option<TimeBucket>,
    pub visit_type: VisitType,
    pub discharge_type: Option<DischargeType>,
    pub content_tokens: Vec<u32>,
    /// True when the stream ended before this visit's `[SEP]`.
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedTimeline {
    pub age_token: u32,
    pub sex: Sex,
    pub visits: Vec<DecodedVisit>,
}

/// Parses a token stream back into visits, verifying the timeline grammar.
/// The final visit may be open (missing `[SEP]`); any other deviation is a
/// grammar error naming the offending position.
pub fn decode_tokens(token_ids: &[u32], vocab: &Vocabulary) -> Result<DecodedTimeline> {
    let err = |position: usize, msg: &str| Error::Grammar {
        position,
        msg: msg.to_string(),
    };
    let token_name = |id: u32| vocab.token(id).unwrap_or("<invalid id>").to_string();

    if token_ids.first() != Some(&vocab.specials.cls) {
        return Err(err(0, "sequence must start with [CLS]"));
    }
    let age_token = *token_ids
        .get(1)
        .ok_or_else(|| err(1, "missing age token"))?;
    if !vocab.is_age_token(age_token) {
        return Err(err(1, &format!("expected age token, got {}", token_name(age_token))));
    }
    let sex_id = *token_ids
        .get(2)
        .ok_or_else(|| err(2, "missing sex token"))?;
    let sex = vocab
        .sex_of(sex_id)
        .ok_or_else(|| err(2, &format!("expected sex token, got {}", token_name(sex_id))))?;

    #[derive(PartialEq)]
    enum State {
        VisitStart,
        ExpectVisitType,
        InVisit { has_content: bool },
        AfterDischarge,
    }

    let mut visits: Vec<DecodedVisit> = Vec::new();
    let mut state = State::VisitStart;
    let mut current_tt: Option<TimeBucket> = None;
    let mut current_vt: Option<VisitType> = None;
    let mut current_dt: Option<DischargeType> = None;
    let mut current_content: Vec<u32> = Vec::new();

    for (pos, &id) in token_ids.iter().enumerate().skip(3) {
        match state {
            State::VisitStart => {
                if let Some(bucket) = vocab.time_bucket_of(id) {
                    if visits.is_empty() {
                        return Err(err(pos, "time token not allowed on the first visit"));
                    }
                    current_tt = Some(bucket);
                    state = State::ExpectVisitType;
                } else if let Some(vt) = vocab.visit_type_of(id) {
                    if !visits.is_empty() {
                        return Err(err(pos, "missing time token before visit type"));
                    }
                    current_vt = Some(vt);
                    state = State::InVisit { has_content: false };
                } else {
                    return Err(err(
                        pos,
                        &format!("expected visit start, got {}", token_name(id)),
                    ));
                }
            }
            State::ExpectVisitType => {
                let Some(vt) = vocab.visit_type_of(id) else {
                    return Err(err(
                        pos,
                        &format!("expected visit type after time token, got {}", token_name(id)),
                    ));
                };
                current_vt = Some(vt);
                state = State::InVisit { has_content: false };
            }
            State::InVisit { has_content } => {
                if vocab.is_content(id) {
                    current_content.push(id);
                    state = State::InVisit { has_content: true };
                } else if let Some(dt) = vocab.discharge_of(id) {
                    if !has_content {
                        return Err(err(pos, "discharge token before any event"));
                    }
                    current_dt = Some(dt);
                    state = State::AfterDischarge;
                } else if id == vocab.specials.sep {
                    if !has_content {
                        return Err(err(pos, "visit closed without events"));
                    }
                    visits.push(DecodedVisit {
                        time_bucket: current_tt.take(),
                        visit_type: current_vt.take().expect("visit type set"),
                        discharge_type: current_dt.take(),
                        content_tokens: std::mem::take(&mut current_content),
                        open: false,
                    });
                    state = State::VisitStart;
                } else {
                    return Err(err(
                        pos,
                        &format!("unexpected token {} inside visit", token_name(id)),
                    ));
                }
            }
            State::AfterDischarge => {
                if id != vocab.specials.sep {
                    return Err(err(
                        pos,
                        &format!("expected [SEP] after discharge token, got {}", token_name(id)),
                    ));
                }
                visits.push(DecodedVisit {
                    time_bucket: current_tt.take(),
                    visit_type: current_vt.take().expect("visit type set"),
                    discharge_type: current_dt.take(),
                    content_tokens: std::mem::take(&mut current_content),
                    open: false,
                });
                state = State::VisitStart;
            }
        }
    }

    match state {
        State::VisitStart => {}
        State::ExpectVisitType => {
            return Err(err(token_ids.len(), "stream ends after a dangling time token"));
        }
        State::InVisit { has_content } => {
            if !has_content {
                return Err(err(token_ids.len(), "stream ends inside an empty visit"));
            }
            visits.push(DecodedVisit {
                time_bucket: current_tt.take(),
                visit_type: current_vt.take().expect("visit type set"),
                discharge_type: current_dt.take(),
                content_tokens: current_content,
                open: true,
            });
        }
        State::AfterDischarge => {
            visits.push(DecodedVisit {
                time_bucket: current_tt.take(),
                visit_type: current_vt.take().expect("visit type set"),
                discharge_type: current_dt.take(),
                content_tokens: current_content,
                open: true,
            });
        }
    }

    Ok(DecodedTimeline {
        age_token,
        sex,
        visits,
    })
}

/// Grammar check without keeping the decoded structure.
pub fn validate_grammar(token_ids: &[u32], vocab: &Vocabulary) -> Result<()> {
    decode_tokens(token_ids, vocab).map(|_| ())
}

pub fn save_dataset(sequences: &[TokenSequence], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        format: &'a str,
        version: u32,
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut out,
        &Header {
            format: DATASET_FORMAT,
            version: DATASET_VERSION,
        },
    )
    .map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    for seq in sequences {
        serde_json::to_writer(&mut out, seq).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<TokenSequence>> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header line".into()))?;
    let header: Header =
        serde_json::from_str(&first?).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(parse_err(1, "unknown dataset format or version".into()));
    }
    let mut sequences = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: TokenSequence =
            serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
        if seq.token_ids.len() != seq.token_dates.len()
            || seq.token_ids.len() != seq.visit_index.len()
        {
            return Err(parse_err(idx + 1, "parallel lists have differing lengths".into()));
        }
        sequences.push(seq);
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClinicalEvent, Domain, Visit};
    use crate::vocab::build_vocabulary;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn dx(code: &str, ts: &str) -> ClinicalEvent {
        ClinicalEvent {
            domain: Domain::Diagnosis,
            code: code.into(),
            value: None,
            timestamp: date(ts),
        }
    }

    fn visit(id: &str, day: &str, vt: VisitType, events: Vec<ClinicalEvent>) -> Visit {
        Visit {
            visit_id: id.into(),
            start_date: date(day),
            visit_type: vt,
            discharge_type: (vt == VisitType::Inpatient).then_some(DischargeType::Home),
            events,
        }
    }

    fn fixture_patient() -> PatientRecord {
        PatientRecord {
            patient_id: "P0".into(),
            birth_year: 1984,
            sex: Sex::Female,
            visits: vec![visit(
                "V0",
                "2020-01-10",
                VisitType::Outpatient,
                vec![dx("A00", "2020-01-10"), dx("B20", "2020-01-10")],
            )],
        }
    }

    fn fixture_vocab(corpus: &[PatientRecord]) -> Vocabulary {
        build_vocabulary(corpus, &IcdMap::empty(), 0.0)
            .unwrap()
            .vocabulary
    }

    #[test]
    fn single_visit_layout() {
        let patient = fixture_patient();
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS).unwrap();
        let expected = vec![
            vocab.specials.cls,
            // age 36 at the first visit -> bucket 35-39
            vocab.token_id("[AGE:35-39]").unwrap(),
            vocab.sex_token(Sex::Female),
            vocab.visit_type_token(VisitType::Outpatient),
            vocab.token_id("DX:A00").unwrap(),
            vocab.token_id("DX:B20").unwrap(),
            vocab.specials.sep,
        ];
        assert_eq!(seq.token_ids, expected);
        assert_eq!(seq.visit_index, vec![0, 0, 0, 1, 1, 1, 1]);
        assert!(seq.token_dates.iter().all(|d| *d == date("2020-01-10")));
    }

    #[test]
    fn second_visit_carries_time_and_discharge_tokens() {
        let mut patient = fixture_patient();
        patient.visits.push(visit(
            "V1",
            "2020-05-09", // 120 days later -> t1
            VisitType::Inpatient,
            vec![dx("C30", "2020-05-09")],
        ));
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS).unwrap();
        let tail = &seq.token_ids[7..];
        let expected = vec![
            vocab.time_token(TimeBucket::T1),
            vocab.visit_type_token(VisitType::Inpatient),
            vocab.token_id("DX:C30").unwrap(),
            vocab.discharge_token(DischargeType::Home),
            vocab.specials.sep,
        ];
        assert_eq!(tail, expected);

        let decoded = decode_tokens(&seq.token_ids, &vocab).unwrap();
        assert_eq!(decoded.visits.len(), 2);
        assert_eq!(decoded.visits[0].time_bucket, None);
        assert_eq!(decoded.visits[1].time_bucket, Some(TimeBucket::T1));
        assert_eq!(decoded.visits[1].discharge_type, Some(DischargeType::Home));
    }

    #[test]
    fn oldest_visits_dropped_when_over_window() {
        // Three visits; limit forces dropping the oldest one.
        let mut patient = fixture_patient();
        patient.visits = vec![
            visit(
                "V0",
                "2020-01-01",
                VisitType::Outpatient,
                (0..10).map(|i| dx(&format!("A{i:02}"), "2020-01-01")).collect(),
            ),
            visit(
                "V1",
                "2020-03-01",
                VisitType::Outpatient,
                (0..10).map(|i| dx(&format!("B{i:02}"), "2020-03-01")).collect(),
            ),
            visit(
                "V2",
                "2020-06-01",
                VisitType::Outpatient,
                (0..10).map(|i| dx(&format!("C{i:02}"), "2020-06-01")).collect(),
            ),
        ];
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        // Full encoding: 3 + 12 + (1+12)*2 = 41 tokens; limit 30 keeps two visits.
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, 30).unwrap();
        assert!(seq.len() <= 30);
        let decoded = decode_tokens(&seq.token_ids, &vocab).unwrap();
        assert_eq!(decoded.visits.len(), 2);
        assert_eq!(decoded.visits[0].time_bucket, None);
        assert!(decoded.visits[0]
            .content_tokens
            .iter()
            .all(|id| vocab.token(*id).unwrap().starts_with("DX:B")));
        // Demographics survive and age is as of the first surviving visit.
        assert_eq!(seq.token_ids[0], vocab.specials.cls);
        assert!(vocab.is_age_token(seq.token_ids[1]));
        assert_eq!(seq.token_ids[2], vocab.sex_token(Sex::Female));
    }

    #[test]
    fn as_of_restricts_history() {
        let mut patient = fixture_patient();
        patient.visits.push(visit(
            "V1",
            "2021-01-01",
            VisitType::Outpatient,
            vec![dx("D10", "2021-01-01")],
        ));
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(
            &patient,
            &vocab,
            &IcdMap::empty(),
            Some(date("2020-06-01")),
            CONTEXT_TOKENS,
        )
        .unwrap();
        let decoded = decode_tokens(&seq.token_ids, &vocab).unwrap();
        assert_eq!(decoded.visits.len(), 1);

        let err = encode_patient(
            &patient,
            &vocab,
            &IcdMap::empty(),
            Some(date("2019-01-01")),
            CONTEXT_TOKENS,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyHistory));
    }

    #[test]
    fn truncate_history_boundaries() {
        let mut patient = fixture_patient();
        patient.visits.push(visit(
            "V1",
            "2020-07-18", // day 200 relative to 2020-01-01-ish fixture
            VisitType::Outpatient,
            vec![dx("D10", "2020-07-18")],
        ));
        let full = truncate_history_at(&patient, date("2021-01-01")).unwrap();
        assert_eq!(full.visits.len(), 2);
        let first_only = truncate_history_at(&patient, date("2020-01-10")).unwrap();
        assert_eq!(first_only.visits.len(), 1);
        assert!(truncate_history_at(&patient, date("2019-12-31")).is_err());
    }

    #[test]
    fn round_trip_preserves_structure() {
        let mut patient = fixture_patient();
        patient.visits.push(visit(
            "V1",
            "2020-08-01",
            VisitType::Inpatient,
            vec![dx("C30", "2020-08-01"), dx("A00", "2020-08-01")],
        ));
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS).unwrap();
        let decoded = decode_tokens(&seq.token_ids, &vocab).unwrap();

        assert_eq!(decoded.sex, Sex::Female);
        assert_eq!(decoded.visits.len(), patient.visits.len());
        assert_eq!(decoded.visits[1].visit_type, VisitType::Inpatient);
        // Content token multisets match the normalized events per visit.
        for (visit, decoded_visit) in patient.visits.iter().zip(&decoded.visits) {
            let mut expected: Vec<u32> = visit
                .events
                .iter()
                .map(|e| vocab.diagnosis_token(&e.code, &IcdMap::empty()))
                .collect();
            expected.sort_unstable();
            let mut got = decoded_visit.content_tokens.clone();
            got.sort_unstable();
            assert_eq!(expected, got);
        }
    }

    #[test]
    fn open_final_visit_flagged() {
        let patient = fixture_patient();
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS).unwrap();
        let without_sep = &seq.token_ids[..seq.len() - 1];
        let decoded = decode_tokens(without_sep, &vocab).unwrap();
        assert!(decoded.visits.last().unwrap().open);
    }

    #[test]
    fn adjacent_sep_rejected() {
        let patient = fixture_patient();
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let mut ids = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS)
            .unwrap()
            .token_ids;
        let pos = ids.len();
        ids.push(vocab.specials.sep);
        match decode_tokens(&ids, &vocab).unwrap_err() {
            Error::Grammar { position, .. } => assert_eq!(position, pos),
            other => panic!("expected grammar error, got {other:?}"),
        }
    }

    #[test]
    fn discharge_outside_visit_rejected() {
        let patient = fixture_patient();
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let mut ids = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS)
            .unwrap()
            .token_ids;
        ids.push(vocab.discharge_token(DischargeType::Home));
        assert!(matches!(
            decode_tokens(&ids, &vocab),
            Err(Error::Grammar { .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let patient = fixture_patient();
        let vocab = fixture_vocab(std::slice::from_ref(&patient));
        let seq = encode_patient(&patient, &vocab, &IcdMap::empty(), None, CONTEXT_TOKENS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        save_dataset(std::slice::from_ref(&seq), &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, vec![seq]);
    }
}
