//! Seeded synthetic corpus generation.
//!
//! Every patient is generated from its own counter-based random stream keyed
//! by `(seed, patient index)`, so the corpus is byte-identical for identical
//! configs regardless of generation order or thread count.
//!
//! Planted rules inject known structure:
//! - `NextToken { x, y }`: whenever code `x` occurs in a visit, code `y` is
//!   inserted immediately after it (with probability `fire_prob`).
//! - `Trajectory`: when a visit contains the full precursor set, the target
//!   code is made to appear in a later visit within the horizon.
//!
//! Both are enforced on the final, canonically sorted event order, so a
//! brute-force scan over the generated corpus can verify them exactly.

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ClinicalEvent, DischargeType, Domain, PatientRecord, Sex, Visit, VisitType,
};
use crate::error::{Error, Result};

/// Day ranges used when sampling inter-visit gaps, one per time bucket.
pub const DEFAULT_GAP_RANGES: [(u32, u32); 4] = [(7, 92), (93, 183), (184, 365), (366, 730)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMixture {
    /// Probability of drawing each time bucket (t0..t3); must sum to 1.
    pub bucket_probs: [f64; 4],
    /// Inclusive day range sampled uniformly within each bucket.
    pub bucket_day_ranges: [(u32, u32); 4],
}

impl Default for GapMixture {
    fn default() -> Self {
        GapMixture {
            bucket_probs: [0.45, 0.3, 0.15, 0.1],
            bucket_day_ranges: DEFAULT_GAP_RANGES,
        }
    }
}

/// One per-domain code pool: `size` deterministically enumerated codes,
/// plus optional explicit codes at the head (frequent under the Zipf draw)
/// and tail (rare) of the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPool {
    pub size: usize,
    pub zipf_s: f64,
    #[serde(default)]
    pub head_codes: Vec<String>,
    #[serde(default)]
    pub tail_codes: Vec<String>,
}

impl DomainPool {
    pub fn new(size: usize, zipf_s: f64) -> Self {
        DomainPool {
            size,
            zipf_s,
            head_codes: Vec::new(),
            tail_codes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodePools {
    pub diagnosis: DomainPool,
    pub medication: DomainPool,
    pub procedure: DomainPool,
    pub lab: DomainPool,
}

impl Default for CodePools {
    fn default() -> Self {
        CodePools {
            diagnosis: DomainPool::new(150, 1.1),
            medication: DomainPool::new(80, 1.1),
            procedure: DomainPool::new(60, 1.1),
            lab: DomainPool::new(40, 1.05),
        }
    }
}

impl CodePools {
    fn get(&self, domain: Domain) -> &DomainPool {
        match domain {
            Domain::Diagnosis => &self.diagnosis,
            Domain::Medication => &self.medication,
            Domain::Procedure => &self.procedure,
            Domain::Lab => &self.lab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedRule {
    /// Code `x` is immediately followed by code `y` within the visit,
    /// with probability `fire_prob` per occurrence of `x`.
    NextToken { x: String, y: String, fire_prob: f64 },
    /// A visit containing all of `precursors` implies `target` appears in a
    /// later visit dated within `horizon_days`. When the generator has to
    /// plant the target itself it places it `gap_days` after the precursor
    /// visit. `seed_fraction` of patients get the precursor set planted into
    /// one visit; a further `negative_fraction` get the precursors planted
    /// while the rule is suppressed for them (precursor-without-target
    /// controls). Trajectory targets are never drawn naturally, so the rule
    /// is the target's only source.
    Trajectory {
        precursors: Vec<String>,
        target: String,
        horizon_days: u32,
        gap_days: (u32, u32),
        fire_prob: f64,
        #[serde(default)]
        seed_fraction: f64,
        #[serde(default)]
        negative_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Geometric success probability; visit count = 1 + Geometric(p), capped.
    pub visit_geometric_p: f64,
    pub max_visits: usize,
    /// Events drawn per visit, uniform inclusive range (before planting).
    pub events_per_visit: (u32, u32),
    /// Probability of each domain when drawing an event (d, m, p, l).
    pub domain_mixture: [f64; 4],
    pub gap_mixture: GapMixture,
    pub code_pools: CodePools,
    #[serde(default)]
    pub planted_rules: Vec<PlantedRule>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 1000,
            seed: 0,
            visit_geometric_p: 0.18,
            max_visits: 30,
            events_per_visit: (1, 6),
            domain_mixture: [0.4, 0.25, 0.2, 0.15],
            gap_mixture: GapMixture::default(),
            code_pools: CodePools::default(),
            planted_rules: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.visit_geometric_p > 0.0 && self.visit_geometric_p <= 1.0) {
            return cfg(format!(
                "visit_geometric_p must lie in (0, 1], got {}",
                self.visit_geometric_p
            ));
        }
        if self.max_visits == 0 {
            return cfg("max_visits must be >= 1".into());
        }
        if self.events_per_visit.0 == 0 || self.events_per_visit.0 > self.events_per_visit.1 {
            return cfg(format!(
                "events_per_visit range invalid: {:?}",
                self.events_per_visit
            ));
        }
        check_probs("domain_mixture", &self.domain_mixture)?;
        check_probs("gap_mixture.bucket_probs", &self.gap_mixture.bucket_probs)?;
        let bucket_bounds = [(1u32, 92u32), (93, 183), (184, 365), (366, u32::MAX)];
        for (i, ((lo, hi), (blo, bhi))) in self
            .gap_mixture
            .bucket_day_ranges
            .iter()
            .zip(bucket_bounds.iter())
            .enumerate()
        {
            if lo > hi || lo < blo || hi > bhi {
                return cfg(format!(
                    "gap range for t{i} must lie within [{blo}, {bhi}], got [{lo}, {hi}]"
                ));
            }
        }
        for domain in Domain::ALL {
            let pool = self.code_pools.get(domain);
            if pool.size < 1 {
                return cfg(format!("{} pool size must be >= 1", domain.label()));
            }
            if !(pool.zipf_s > 0.0) {
                return cfg(format!("{} zipf exponent must be > 0", domain.label()));
            }
        }
        let pools = MaterializedPools::new(&self.code_pools);
        let mut rule_codes: Vec<&str> = Vec::new();
        for rule in &self.planted_rules {
            match rule {
                PlantedRule::NextToken { x, y, fire_prob } => {
                    if !(0.0..=1.0).contains(fire_prob) {
                        return cfg(format!("fire_prob {fire_prob} outside [0, 1]"));
                    }
                    if x >= y {
                        return cfg(format!(
                            "next_token rule requires x < y lexicographically \
                             (canonical event order), got {x:?} >= {y:?}"
                        ));
                    }
                    for code in [x, y] {
                        if !pools.contains_diagnosis(code) {
                            return cfg(format!(
                                "next_token code {code:?} is not in the diagnosis pool"
                            ));
                        }
                        rule_codes.push(code);
                    }
                }
                PlantedRule::Trajectory {
                    precursors,
                    target,
                    horizon_days,
                    gap_days,
                    fire_prob,
                    seed_fraction,
                    negative_fraction,
                } => {
                    if precursors.is_empty() {
                        return cfg("trajectory rule needs at least one precursor".into());
                    }
                    if *horizon_days == 0 {
                        return cfg("trajectory horizon must be > 0".into());
                    }
                    if gap_days.0 == 0 || gap_days.0 > gap_days.1 || gap_days.1 > *horizon_days {
                        return cfg(format!(
                            "gap_days {gap_days:?} must satisfy 1 <= lo <= hi <= horizon"
                        ));
                    }
                    if !(0.0..=1.0).contains(fire_prob) {
                        return cfg(format!("fire_prob {fire_prob} outside [0, 1]"));
                    }
                    if *seed_fraction < 0.0
                        || *negative_fraction < 0.0
                        || seed_fraction + negative_fraction > 1.0
                    {
                        return cfg("seed/negative fractions must be >= 0 and sum to <= 1".into());
                    }
                    for code in precursors.iter().chain(std::iter::once(target)) {
                        if !pools.contains_diagnosis(code) {
                            return cfg(format!(
                                "trajectory code {code:?} is not in the diagnosis pool"
                            ));
                        }
                        rule_codes.push(code);
                    }
                }
            }
        }
        let mut sorted = rule_codes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != rule_codes.len() {
            return cfg("planted rule codes must be pairwise distinct across rules".into());
        }
        Ok(())
    }
}

fn check_probs(name: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(format!("{name} entries must lie in [0, 1]")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} must sum to 1, got {total}")));
    }
    Ok(())
}

/// ICD-10 chapter letters with the number range that is actually covered by
/// a chapter (gaps like D90-D99 are avoided so every generated code maps to
/// a standard chapter).
const DIAGNOSIS_LETTERS: [(char, u32, u32); 14] = [
    ('A', 0, 99),
    ('B', 0, 99),
    ('C', 0, 99),
    ('D', 0, 89),
    ('E', 0, 89),
    ('F', 1, 99),
    ('G', 0, 99),
    ('H', 0, 95),
    ('I', 0, 99),
    ('J', 0, 99),
    ('K', 0, 95),
    ('L', 0, 99),
    ('M', 0, 99),
    ('N', 0, 99),
];

fn generated_code(domain: Domain, index: usize) -> String {
    match domain {
        Domain::Diagnosis => {
            let (letter, lo, hi) = DIAGNOSIS_LETTERS[index % 14];
            let k = (index / 14) as u32;
            let num = lo + k % (hi - lo + 1);
            let category = format!("{letter}{num:02}");
            // Every third code carries a decimal extension so that
            // category truncation is exercised by ordinary corpora.
            match index % 3 {
                1 => format!("{category}.{}", index % 10),
                _ => category,
            }
        }
        Domain::Medication => format!("RX{index:04}"),
        Domain::Procedure => format!("CPT{index:04}"),
        Domain::Lab => format!("LAB{index:03}"),
    }
}

/// Code pools expanded to concrete ranked code lists.
struct MaterializedPools {
    /// Ranked codes per domain (most frequent first under the Zipf draw).
    ranked: [Vec<String>; 4],
    /// `ranked` minus trajectory targets, used for natural draws.
    natural: [Vec<String>; 4],
}

impl MaterializedPools {
    fn new(pools: &CodePools) -> Self {
        let build = |domain: Domain| {
            let pool = pools.get(domain);
            let mut codes: Vec<String> = Vec::new();
            for code in &pool.head_codes {
                codes.push(code.clone());
            }
            for i in 0..pool.size {
                codes.push(generated_code(domain, i));
            }
            for code in &pool.tail_codes {
                codes.push(code.clone());
            }
            let mut seen = std::collections::HashSet::new();
            codes.retain(|c| seen.insert(c.clone()));
            codes
        };
        let ranked = [
            build(Domain::Diagnosis),
            build(Domain::Medication),
            build(Domain::Procedure),
            build(Domain::Lab),
        ];
        MaterializedPools {
            natural: ranked.clone(),
            ranked,
        }
    }

    fn exclude_from_natural(&mut self, codes: &[String]) {
        for list in &mut self.natural {
            list.retain(|c| !codes.contains(c));
        }
    }

    fn contains_diagnosis(&self, code: &str) -> bool {
        self.ranked[Domain::Diagnosis as usize]
            .iter()
            .any(|c| c == code)
    }
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    let mut pools = MaterializedPools::new(&config.code_pools);
    let targets: Vec<String> = config
        .planted_rules
        .iter()
        .filter_map(|r| match r {
            PlantedRule::Trajectory { target, .. } => Some(target.clone()),
            _ => None,
        })
        .collect();
    pools.exclude_from_natural(&targets);

    let records: Vec<PatientRecord> = (0..config.n_patients)
        .into_par_iter()
        .map(|index| generate_patient(config, &pools, index))
        .collect();
    for record in &records {
        record.validate()?;
    }
    Ok(records)
}

fn patient_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn zipf_rank(rng: &mut ChaCha8Rng, n: usize, s: f64) -> usize {
    if n == 1 {
        return 0;
    }
    let dist = Zipf::new(n as f64, s).expect("validated zipf parameters");
    (dist.sample(rng) as usize - 1).min(n - 1)
}

/// Log-normal lab value parameters derived from the code's position in the
/// pool, so each lab code has a stable, nondegenerate value distribution.
fn lab_value(rng: &mut ChaCha8Rng, rank: usize) -> f64 {
    let mu = 2.3 + (rank % 7) as f64 * 0.3;
    let sigma = 0.4 + (rank % 5) as f64 * 0.1;
    LogNormal::new(mu, sigma).expect("valid lognormal").sample(rng)
}

fn generate_patient(
    config: &GeneratorConfig,
    pools: &MaterializedPools,
    index: usize,
) -> PatientRecord {
    let mut rng = patient_stream(config.seed, index);
    let patient_id = format!("P{index:06}");

    let birth_year = rng.random_range(1930..=2004);
    let sex = Sex::ALL[sample_index(&mut rng, &[0.49, 0.49, 0.02])];

    let epoch = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let first_date = epoch + Days::new(rng.random_range(0..1826));

    let extra = Geometric::new(config.visit_geometric_p)
        .expect("validated geometric parameter")
        .sample(&mut rng) as usize;
    let n_visits = (1 + extra).min(config.max_visits);

    let mut visits: Vec<Visit> = Vec::with_capacity(n_visits);
    let mut date = first_date;
    for v in 0..n_visits {
        if v > 0 {
            let bucket = sample_index(&mut rng, &config.gap_mixture.bucket_probs);
            let (lo, hi) = config.gap_mixture.bucket_day_ranges[bucket];
            date = date + Days::new(rng.random_range(lo..=hi) as u64);
        }
        visits.push(generate_visit(config, pools, &mut rng, date));
    }

    apply_trajectory_rules(config, pools, &mut rng, &mut visits);
    apply_next_token_rules(config, &mut rng, &mut visits);

    for (i, visit) in visits.iter_mut().enumerate() {
        visit.visit_id = format!("{patient_id}-V{i}");
    }

    PatientRecord {
        patient_id,
        birth_year,
        sex,
        visits,
    }
}

fn generate_visit(
    config: &GeneratorConfig,
    pools: &MaterializedPools,
    rng: &mut ChaCha8Rng,
    start_date: NaiveDate,
) -> Visit {
    let visit_type = VisitType::ALL[sample_index(rng, &[0.7, 0.15, 0.1, 0.05])];
    let (discharge_type, span_days) = if visit_type == VisitType::Inpatient {
        let discharge = DischargeType::ALL[sample_index(rng, &[0.8, 0.12, 0.03, 0.05])];
        (Some(discharge), rng.random_range(1..=7u64))
    } else {
        (None, 0)
    };

    let n_events = rng.random_range(config.events_per_visit.0..=config.events_per_visit.1);
    let mut events = Vec::with_capacity(n_events as usize);
    for _ in 0..n_events {
        let domain = Domain::ALL[sample_index(rng, &config.domain_mixture)];
        let pool = &pools.natural[domain as usize];
        let spec = config.code_pools.get(domain);
        let rank = zipf_rank(rng, pool.len(), spec.zipf_s);
        let code = pool[rank].clone();
        let value = (domain == Domain::Lab).then(|| lab_value(rng, rank));
        let timestamp = start_date + Days::new(rng.random_range(0..=span_days));
        events.push(ClinicalEvent {
            domain,
            code,
            value,
            timestamp,
        });
    }
    events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    Visit {
        visit_id: String::new(),
        start_date,
        visit_type,
        discharge_type,
        events,
    }
}

/// Makes a diagnosis event dated at the visit start.
fn diagnosis_event(code: &str, date: NaiveDate) -> ClinicalEvent {
    ClinicalEvent {
        domain: Domain::Diagnosis,
        code: code.to_string(),
        value: None,
        timestamp: date,
    }
}

fn apply_trajectory_rules(
    config: &GeneratorConfig,
    pools: &MaterializedPools,
    rng: &mut ChaCha8Rng,
    visits: &mut Vec<Visit>,
) {
    for rule in &config.planted_rules {
        let PlantedRule::Trajectory {
            precursors,
            target,
            horizon_days,
            gap_days,
            fire_prob,
            seed_fraction,
            negative_fraction,
        } = rule
        else {
            continue;
        };

        // Patient role for this rule: seeded positive, seeded negative
        // (precursor-without-target), or untouched.
        let u: f64 = rng.random();
        let seeded = u < seed_fraction + negative_fraction;
        let suppressed = u >= *seed_fraction && seeded;

        if seeded {
            // Plant the precursor set into one visit, preferring a visit
            // with at least one predecessor so cohort history exists.
            let pick = if visits.len() > 1 {
                rng.random_range(1..visits.len())
            } else {
                0
            };
            let visit = &mut visits[pick];
            for code in precursors {
                if !visit.events.iter().any(|e| e.code == *code) {
                    visit.events.push(diagnosis_event(code, visit.start_date));
                }
            }
            visit.events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        }

        if suppressed {
            continue;
        }

        // Fire on every visit that contains the full precursor set.
        let mut i = 0;
        while i < visits.len() {
            let has_all = precursors
                .iter()
                .all(|p| visits[i].events.iter().any(|e| e.code == *p));
            if has_all && rng.random::<f64>() < *fire_prob {
                ensure_target(pools, config, rng, visits, i, target, *horizon_days, *gap_days);
            }
            i += 1;
        }
    }
}

/// Guarantees `target` occurs in a visit dated within `(anchor, anchor + horizon]`.
#[allow(clippy::too_many_arguments)]
fn ensure_target(
    pools: &MaterializedPools,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    visits: &mut Vec<Visit>,
    anchor_idx: usize,
    target: &str,
    horizon_days: u32,
    gap_days: (u32, u32),
) {
    let anchor = visits[anchor_idx].start_date;
    let window_end = anchor + Days::new(horizon_days as u64);

    // Already satisfied?
    if visits
        .iter()
        .any(|v| v.start_date > anchor && v.start_date <= window_end && v.events.iter().any(|e| e.code == target))
    {
        return;
    }

    let planted_date = anchor + Days::new(rng.random_range(gap_days.0..=gap_days.1) as u64);

    // Reuse an existing visit when one collides with or precedes the chosen
    // date inside the window; otherwise insert a fresh visit.
    if let Some(pos) = visits
        .iter()
        .position(|v| v.start_date > anchor && v.start_date >= planted_date.min(window_end) && v.start_date <= window_end)
    {
        let visit = &mut visits[pos];
        visit.events.push(diagnosis_event(target, visit.start_date));
        visit.events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        return;
    }
    if let Some(pos) = visits.iter().position(|v| v.start_date == planted_date) {
        let visit = &mut visits[pos];
        visit.events.push(diagnosis_event(target, visit.start_date));
        visit.events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        return;
    }

    let mut filler = generate_visit(config, pools, rng, planted_date);
    filler.events.push(diagnosis_event(target, planted_date));
    // Multi-day inpatient filler could overlap the next visit's date; force
    // a single-day outpatient shell instead.
    filler.visit_type = VisitType::Outpatient;
    filler.discharge_type = None;
    for event in &mut filler.events {
        event.timestamp = planted_date;
    }
    filler.events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let insert_at = visits
        .iter()
        .position(|v| v.start_date > planted_date)
        .unwrap_or(visits.len());
    visits.insert(insert_at, filler);
}

fn apply_next_token_rules(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    visits: &mut [Visit],
) {
    for rule in &config.planted_rules {
        let PlantedRule::NextToken { x, y, fire_prob } = rule else {
            continue;
        };
        for visit in visits.iter_mut() {
            if !visit.events.iter().any(|e| e.code == *x) {
                continue;
            }
            // Deduplicate x per timestamp so "every occurrence of x" has a
            // well-defined immediate successor in the sorted order.
            let mut seen_ts = Vec::new();
            visit.events.retain(|e| {
                if e.code == *x {
                    if seen_ts.contains(&e.timestamp) {
                        return false;
                    }
                    seen_ts.push(e.timestamp);
                }
                true
            });

            let occurrences: Vec<(NaiveDate, Domain)> = visit
                .events
                .iter()
                .filter(|e| e.code == *x)
                .map(|e| (e.timestamp, e.domain))
                .collect();
            for (ts, domain) in occurrences {
                if rng.random::<f64>() >= *fire_prob {
                    continue;
                }
                // Clear anything that would sort strictly between x and y,
                // then insert y right after x.
                visit.events.retain(|e| {
                    !(e.timestamp == ts
                        && e.domain == domain
                        && e.code.as_str() > x.as_str()
                        && e.code.as_str() < y.as_str())
                });
                let x_pos = visit
                    .events
                    .iter()
                    .position(|e| e.code == *x && e.timestamp == ts)
                    .expect("x occurrence still present");
                visit.events.insert(
                    x_pos + 1,
                    ClinicalEvent {
                        domain,
                        code: y.clone(),
                        value: None,
                        timestamp: ts,
                    },
                );
            }
        }
    }
}
