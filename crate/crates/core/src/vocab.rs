//! Token vocabulary: code normalization, frequency filtering, lab-value
//! decile binning, special tokens and the relative time-bucket function.
//!
//! Construction order is fixed: ICD-9→10 mapping, category truncation,
//! patient-frequency filtering (on the truncated categories), lab eCDF
//! fitting, then deterministic id assignment — specials first, code tokens
//! in lexicographic order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::{DischargeType, Domain, PatientRecord, Sex, VisitType};
use crate::error::{Error, Result};

pub const VOCAB_FORMAT: &str = "ehrgpt.vocab";
pub const VOCAB_VERSION: u32 = 1;

/// Default patient-frequency threshold: codes present in fewer than 0.1%
/// of patients are dropped.
pub const DEFAULT_FREQUENCY_THRESHOLD: f64 = 0.001;

/// Relative gap between consecutive visits, quantized to four buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeBucket {
    /// Within the same quarter (≤ 92 days).
    T0,
    /// More than three months but within six (93–183 days).
    T1,
    /// More than six months but within a year (184–365 days).
    T2,
    /// More than a year (> 365 days).
    T3,
}

impl TimeBucket {
    pub const ALL: [TimeBucket; 4] = [
        TimeBucket::T0,
        TimeBucket::T1,
        TimeBucket::T2,
        TimeBucket::T3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Conservative lower bound (days) on the gap this bucket encodes.
    pub fn lower_bound_days(self) -> u32 {
        match self {
            TimeBucket::T0 => 0,
            TimeBucket::T1 => 93,
            TimeBucket::T2 => 184,
            TimeBucket::T3 => 366,
        }
    }
}

impl fmt::Display for TimeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.index())
    }
}

/// Quantizes a nonnegative day gap. Errors on negative gaps, which would
/// mean visits are out of order.
pub fn time_bucket(delta_days: i64) -> Result<TimeBucket> {
    if delta_days < 0 {
        return Err(Error::Data(format!(
            "negative visit gap of {delta_days} days violates visit ordering"
        )));
    }
    Ok(match delta_days {
        0..=92 => TimeBucket::T0,
        93..=183 => TimeBucket::T1,
        184..=365 => TimeBucket::T2,
        _ => TimeBucket::T3,
    })
}

/// ICD-9 → ICD-10 lookup table with identity fallback for codes that are
/// not in the table (already-ICD-10 codes pass through unchanged).
#[derive(Debug, Clone, Default)]
pub struct IcdMap {
    entries: HashMap<String, String>,
}

impl IcdMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        IcdMap {
            entries: pairs.into_iter().collect(),
        }
    }

    /// Loads a two-column whitespace-separated text file (icd9, icd10).
    /// Lines starting with `#` and blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(File::open(path)?).read_to_string(&mut text)?;
        let mut entries = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(icd9), Some(icd10)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: "expected two columns (icd9, icd10)".into(),
                });
            };
            entries.insert(icd9.to_string(), icd10.to_string());
        }
        Ok(IcdMap { entries })
    }

    pub fn map<'a>(&'a self, code: &'a str) -> &'a str {
        self.entries.get(code).map(String::as_str).unwrap_or(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Maps an ICD-9 code to ICD-10 where the table knows it, otherwise
/// returns the input unchanged.
pub fn map_icd9_to_icd10(code: &str, mapping: &IcdMap) -> String {
    mapping.map(code).to_string()
}

/// Truncates a diagnosis code to its 3-character category (the substring
/// before the decimal point).
pub fn truncate_icd(code: &str) -> &str {
    match code.find('.') {
        Some(pos) => &code[..pos],
        None => code,
    }
}

/// Full diagnosis normalization: mapping then truncation.
pub fn normalize_diagnosis(code: &str, mapping: &IcdMap) -> String {
    truncate_icd(mapping.map(code)).to_string()
}

/// Normalized (domain, code) key used for counting and token construction.
/// Diagnoses are mapped and truncated; other domains keep their raw code.
pub fn normalize_code(domain: Domain, code: &str, mapping: &IcdMap) -> String {
    match domain {
        Domain::Diagnosis => normalize_diagnosis(code, mapping),
        _ => code.to_string(),
    }
}

/// Retains a normalized code iff the fraction of distinct patients whose
/// record contains it is at least `threshold`.
pub fn filter_infrequent(
    corpus: &[PatientRecord],
    mapping: &IcdMap,
    threshold: f64,
) -> Result<BTreeSet<(Domain, String)>> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "frequency threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let mut patient_counts: BTreeMap<(Domain, String), usize> = BTreeMap::new();
    for record in corpus {
        let mut seen: BTreeSet<(Domain, String)> = BTreeSet::new();
        for visit in &record.visits {
            for event in &visit.events {
                seen.insert((event.domain, normalize_code(event.domain, &event.code, mapping)));
            }
        }
        for key in seen {
            *patient_counts.entry(key).or_insert(0) += 1;
        }
    }
    let total = corpus.len() as f64;
    Ok(patient_counts
        .into_iter()
        .filter(|(_, count)| *count as f64 / total >= threshold)
        .map(|(key, _)| key)
        .collect())
}

/// Nearest-rank percentile: the p-th percentile of a sorted list is the
/// element at 1-based rank ceil(p/100 · n).
fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    let n = sorted.len();
    let rank = (percent * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Fits per-code decile edges on training values. Codes with at least 10
/// distinct values get 9 edges (the 10th..90th percentiles); codes with
/// fewer get a degenerate single-bin entry (no edges). Codes with no
/// values are dropped and reported in the warnings list.
pub fn fit_lab_ecdf(
    training_values: &BTreeMap<String, Vec<f64>>,
) -> (BTreeMap<String, Vec<f64>>, Vec<String>) {
    let mut bins = BTreeMap::new();
    let mut warnings = Vec::new();
    for (code, values) in training_values {
        if values.is_empty() {
            warnings.push(format!("lab code {code}: no training values, dropped"));
            continue;
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite lab values"));
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < 10 {
            bins.insert(code.clone(), Vec::new());
            continue;
        }
        let edges: Vec<f64> = (1..=9).map(|k| nearest_rank(&sorted, 10 * k)).collect();
        bins.insert(code.clone(), edges);
    }
    (bins, warnings)
}

/// Decile index of `value` against ascending `edges`: the number of edges
/// at or below the value. Values below the first edge land in bin 0 and
/// values at or above the last edge in the top bin.
pub fn decile_index(edges: &[f64], value: f64) -> usize {
    edges.iter().take_while(|e| value >= **e).count()
}

/// Special-token ids, resolved once at build/load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: u32,
    pub cls: u32,
    pub sep: u32,
    /// BOS and EOS deliberately share a single id.
    pub bos_eos: u32,
    pub unk: [u32; 4],
    pub time: [u32; 4],
    pub visit_type: [u32; 4],
    pub discharge: [u32; 4],
    pub sex: [u32; 3],
    pub age: Vec<u32>,
}

pub const N_AGE_BUCKETS: usize = 21;

/// 5-year age bucket index: 0–4 → 0, 5–9 → 1, ..., 100+ → 20.
pub fn age_bucket_index(age_years: i32) -> usize {
    (age_years.max(0) as usize / 5).min(N_AGE_BUCKETS - 1)
}

fn age_token_string(bucket: usize) -> String {
    if bucket == N_AGE_BUCKETS - 1 {
        "[AGE:100+]".to_string()
    } else {
        format!("[AGE:{}-{}]", bucket * 5, bucket * 5 + 4)
    }
}

/// The fixed special-token list, in id order.
fn special_token_strings() -> Vec<String> {
    let mut tokens = vec![
        "[PAD]".to_string(),
        "[CLS]".to_string(),
        "[SEP]".to_string(),
        "[BOS/EOS]".to_string(),
    ];
    for domain in Domain::ALL {
        tokens.push(format!("[UNK:{}]", domain.label()));
    }
    for bucket in TimeBucket::ALL {
        tokens.push(format!("[{}]", bucket.to_string().to_uppercase()));
    }
    for vt in VisitType::ALL {
        tokens.push(format!("[VT:{}]", vt.label()));
    }
    for dt in DischargeType::ALL {
        tokens.push(format!("[DT:{}]", dt.label()));
    }
    for sex in Sex::ALL {
        tokens.push(format!("[SEX:{}]", sex.label()));
    }
    for bucket in 0..N_AGE_BUCKETS {
        tokens.push(age_token_string(bucket));
    }
    tokens
}

/// Bidirectional token↔id map plus the special-token registry and
/// per-lab-code decile bin edges. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    pub specials: SpecialTokens,
    /// Raw lab code → ascending decile edges (empty = degenerate single bin).
    pub lab_bins: BTreeMap<String, Vec<f64>>,
    pub frequency_threshold: f64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Token id for a diagnosis event code (normalizing first); unknown
    /// codes map to the diagnosis UNK token.
    pub fn diagnosis_token(&self, code: &str, mapping: &IcdMap) -> u32 {
        let normalized = normalize_diagnosis(code, mapping);
        self.token_id(&format!("DX:{normalized}"))
            .unwrap_or(self.specials.unk[Domain::Diagnosis as usize])
    }

    pub fn medication_token(&self, code: &str) -> u32 {
        self.token_id(&format!("MED:{code}"))
            .unwrap_or(self.specials.unk[Domain::Medication as usize])
    }

    pub fn procedure_token(&self, code: &str) -> u32 {
        self.token_id(&format!("PROC:{code}"))
            .unwrap_or(self.specials.unk[Domain::Procedure as usize])
    }

    /// Token id for a (lab code, value) pair via the fitted decile edges;
    /// codes without fitted bins map to the lab UNK token.
    pub fn lab_token(&self, code: &str, value: f64) -> u32 {
        match self.lab_bins.get(code) {
            Some(edges) => {
                let decile = decile_index(edges, value);
                self.token_id(&format!("LAB:{code}:{decile}"))
                    .unwrap_or(self.specials.unk[Domain::Lab as usize])
            }
            None => self.specials.unk[Domain::Lab as usize],
        }
    }

    pub fn time_token(&self, bucket: TimeBucket) -> u32 {
        self.specials.time[bucket.index()]
    }

    pub fn visit_type_token(&self, vt: VisitType) -> u32 {
        self.specials.visit_type[vt as usize]
    }

    pub fn discharge_token(&self, dt: DischargeType) -> u32 {
        self.specials.discharge[dt as usize]
    }

    pub fn sex_token(&self, sex: Sex) -> u32 {
        self.specials.sex[sex as usize]
    }

    pub fn age_token(&self, birth_year: i32, as_of: NaiveDate) -> u32 {
        let age = as_of.year() - birth_year;
        self.specials.age[age_bucket_index(age)]
    }

    /// Domain of a content token, `None` for specials.
    pub fn domain_of(&self, id: u32) -> Option<Domain> {
        let token = self.token(id)?;
        if token.starts_with("DX:") {
            Some(Domain::Diagnosis)
        } else if token.starts_with("MED:") {
            Some(Domain::Medication)
        } else if token.starts_with("PROC:") {
            Some(Domain::Procedure)
        } else if token.starts_with("LAB:") {
            Some(Domain::Lab)
        } else {
            None
        }
    }

    /// True for clinical content tokens (diagnosis/medication/procedure/lab),
    /// false for structural and demographic tokens.
    pub fn is_content(&self, id: u32) -> bool {
        self.domain_of(id).is_some()
    }

    pub fn time_bucket_of(&self, id: u32) -> Option<TimeBucket> {
        TimeBucket::ALL
            .into_iter()
            .find(|b| self.specials.time[b.index()] == id)
    }

    pub fn visit_type_of(&self, id: u32) -> Option<VisitType> {
        VisitType::ALL
            .into_iter()
            .find(|v| self.specials.visit_type[*v as usize] == id)
    }

    pub fn discharge_of(&self, id: u32) -> Option<DischargeType> {
        DischargeType::ALL
            .into_iter()
            .find(|d| self.specials.discharge[*d as usize] == id)
    }

    pub fn sex_of(&self, id: u32) -> Option<Sex> {
        Sex::ALL
            .into_iter()
            .find(|s| self.specials.sex[*s as usize] == id)
    }

    pub fn is_age_token(&self, id: u32) -> bool {
        self.specials.age.contains(&id)
    }

    /// The 3-character category of a diagnosis token, if `id` is one.
    pub fn diagnosis_category(&self, id: u32) -> Option<&str> {
        self.token(id)?.strip_prefix("DX:")
    }

    fn from_token_list(
        id_to_token: Vec<String>,
        lab_bins: BTreeMap<String, Vec<f64>>,
        frequency_threshold: f64,
    ) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, token) in id_to_token.iter().enumerate() {
            if token_to_id.insert(token.clone(), id as u32).is_some() {
                return Err(Error::Data(format!("duplicate token {token:?}")));
            }
        }
        let id_of = |token: &str| -> Result<u32> {
            token_to_id
                .get(token)
                .copied()
                .ok_or_else(|| Error::Data(format!("missing special token {token:?}")))
        };
        let unk = |d: Domain| id_of(&format!("[UNK:{}]", d.label()));
        let specials = SpecialTokens {
            pad: id_of("[PAD]")?,
            cls: id_of("[CLS]")?,
            sep: id_of("[SEP]")?,
            bos_eos: id_of("[BOS/EOS]")?,
            unk: [
                unk(Domain::Diagnosis)?,
                unk(Domain::Medication)?,
                unk(Domain::Procedure)?,
                unk(Domain::Lab)?,
            ],
            time: [id_of("[T0]")?, id_of("[T1]")?, id_of("[T2]")?, id_of("[T3]")?],
            visit_type: [
                id_of("[VT:outpatient]")?,
                id_of("[VT:inpatient]")?,
                id_of("[VT:emergency]")?,
                id_of("[VT:telehealth]")?,
            ],
            discharge: [
                id_of("[DT:home]")?,
                id_of("[DT:skilled_nursing]")?,
                id_of("[DT:expired]")?,
                id_of("[DT:other]")?,
            ],
            sex: [
                id_of("[SEX:male]")?,
                id_of("[SEX:female]")?,
                id_of("[SEX:other]")?,
            ],
            age: (0..N_AGE_BUCKETS)
                .map(|b| id_of(&age_token_string(b)))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
            specials,
            lab_bins,
            frequency_threshold,
        })
    }
}

/// Vocabulary plus non-fatal build diagnostics.
#[derive(Debug)]
pub struct VocabularyBuild {
    pub vocabulary: Vocabulary,
    pub warnings: Vec<String>,
}

/// Builds the vocabulary from a training-split corpus: normalization →
/// frequency filter → lab decile fitting → deterministic id assignment.
pub fn build_vocabulary(
    corpus: &[PatientRecord],
    mapping: &IcdMap,
    threshold: f64,
) -> Result<VocabularyBuild> {
    let retained = filter_infrequent(corpus, mapping, threshold)?;

    let mut lab_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in corpus {
        for visit in &record.visits {
            for event in &visit.events {
                if event.domain == Domain::Lab
                    && retained.contains(&(Domain::Lab, event.code.clone()))
                {
                    lab_values
                        .entry(event.code.clone())
                        .or_default()
                        .push(event.value.expect("lab events carry a value"));
                }
            }
        }
    }
    let (lab_bins, warnings) = fit_lab_ecdf(&lab_values);

    let mut code_tokens: Vec<String> = Vec::new();
    for (domain, code) in &retained {
        match domain {
            Domain::Diagnosis => code_tokens.push(format!("DX:{code}")),
            Domain::Medication => code_tokens.push(format!("MED:{code}")),
            Domain::Procedure => code_tokens.push(format!("PROC:{code}")),
            Domain::Lab => {
                let Some(edges) = lab_bins.get(code) else {
                    continue;
                };
                let n_bins = if edges.is_empty() { 1 } else { 10 };
                for decile in 0..n_bins {
                    code_tokens.push(format!("LAB:{code}:{decile}"));
                }
            }
        }
    }
    code_tokens.sort_unstable();
    code_tokens.dedup();

    let mut id_to_token = special_token_strings();
    id_to_token.extend(code_tokens);

    let vocabulary = Vocabulary::from_token_list(id_to_token, lab_bins, threshold)?;
    Ok(VocabularyBuild {
        vocabulary,
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    frequency_threshold: f64,
    tokens: Vec<String>,
    lab_bins: BTreeMap<String, Vec<f64>>,
}

pub fn save_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = VocabFile {
        format: VOCAB_FORMAT.to_string(),
        version: VOCAB_VERSION,
        frequency_threshold: vocab.frequency_threshold,
        tokens: vocab.id_to_token.clone(),
        lab_bins: vocab.lab_bins.clone(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let reader = BufReader::new(File::open(path)?);
    let file: VocabFile = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.format != VOCAB_FORMAT {
        return Err(Error::Data(format!("unknown vocabulary format {:?}", file.format)));
    }
    if file.version != VOCAB_VERSION {
        return Err(Error::Data(format!(
            "unsupported vocabulary version {}",
            file.version
        )));
    }
    Vocabulary::from_token_list(file.tokens, file.lab_bins, file.frequency_threshold)
}
