//! OMOP-like patient records and the synthetic corpus generator.
//!
//! A corpus is a list of [`PatientRecord`]s: demographics plus a strictly
//! date-ordered list of visits, each holding canonically ordered clinical
//! events. The generator ([`generate_corpus`]) produces deterministic,
//! seeded corpora with optional planted structure that downstream tests
//! use as ground truth.

mod generate;
mod io;

pub use generate::{
    generate_corpus, CodePools, DomainPool, GapMixture, GeneratorConfig, PlantedRule,
};
pub use io::{load_corpus, save_corpus, CORPUS_FORMAT, CORPUS_VERSION};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clinical event domain. The declared order (d < m < p < l) is the
/// canonical intra-visit tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Diagnosis,
    Medication,
    Procedure,
    Lab,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::Diagnosis,
        Domain::Medication,
        Domain::Procedure,
        Domain::Lab,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Domain::Diagnosis => "diagnosis",
            Domain::Medication => "medication",
            Domain::Procedure => "procedure",
            Domain::Lab => "lab",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitType {
    Outpatient,
    Inpatient,
    Emergency,
    Telehealth,
}

impl VisitType {
    pub const ALL: [VisitType; 4] = [
        VisitType::Outpatient,
        VisitType::Inpatient,
        VisitType::Emergency,
        VisitType::Telehealth,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VisitType::Outpatient => "outpatient",
            VisitType::Inpatient => "inpatient",
            VisitType::Emergency => "emergency",
            VisitType::Telehealth => "telehealth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DischargeType {
    Home,
    SkilledNursing,
    Expired,
    Other,
}

impl DischargeType {
    pub const ALL: [DischargeType; 4] = [
        DischargeType::Home,
        DischargeType::SkilledNursing,
        DischargeType::Expired,
        DischargeType::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DischargeType::Home => "home",
            DischargeType::SkilledNursing => "skilled_nursing",
            DischargeType::Expired => "expired",
            DischargeType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
    Other,
}

impl Sex {
    pub const ALL: [Sex; 3] = [Sex::Male, Sex::Female, Sex::Other];

    pub fn label(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Other => "other",
        }
    }
}

/// A single coded clinical event. Lab events carry a value; others do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub domain: Domain,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub timestamp: NaiveDate,
}

impl ClinicalEvent {
    /// Canonical intra-visit sort key: (timestamp, domain, code).
    pub fn sort_key(&self) -> (NaiveDate, Domain, &str) {
        (self.timestamp, self.domain, self.code.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub visit_id: String,
    pub start_date: NaiveDate,
    pub visit_type: VisitType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_type: Option<DischargeType>,
    pub events: Vec<ClinicalEvent>,
}

impl Visit {
    /// Last day of the visit span (equals `start_date` for single-day visits).
    pub fn end_date(&self) -> NaiveDate {
        self.events
            .iter()
            .map(|e| e.timestamp)
            .max()
            .unwrap_or(self.start_date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub birth_year: i32,
    pub sex: Sex,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Checks the structural invariants shared by generated and loaded records.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::Data(format!("patient {}: {msg}", self.patient_id));
        if self.visits.is_empty() {
            return Err(fail("record has no visits".into()));
        }
        if self.birth_year >= self.visits[0].start_date.year() {
            return Err(fail(format!(
                "birth year {} does not precede first visit year {}",
                self.birth_year,
                self.visits[0].start_date.year()
            )));
        }
        for pair in self.visits.windows(2) {
            if pair[0].start_date >= pair[1].start_date {
                return Err(fail(format!(
                    "visit dates not strictly increasing ({} then {})",
                    pair[0].start_date, pair[1].start_date
                )));
            }
        }
        for visit in &self.visits {
            if visit.events.is_empty() {
                return Err(fail(format!("visit {} has no events", visit.visit_id)));
            }
            if (visit.visit_type == VisitType::Inpatient) != visit.discharge_type.is_some() {
                return Err(fail(format!(
                    "visit {}: discharge type must be present iff inpatient",
                    visit.visit_id
                )));
            }
            for pair in visit.events.windows(2) {
                if pair[0].sort_key() > pair[1].sort_key() {
                    return Err(fail(format!(
                        "visit {}: events out of canonical order",
                        visit.visit_id
                    )));
                }
            }
            for event in &visit.events {
                if (event.domain == Domain::Lab) != event.value.is_some() {
                    return Err(fail(format!(
                        "event {}: value must be present iff lab",
                        event.code
                    )));
                }
                if event.timestamp < visit.start_date || event.timestamp > visit.end_date() {
                    return Err(fail(format!(
                        "event {} timestamp outside visit span",
                        event.code
                    )));
                }
            }
        }
        Ok(())
    }

    /// True if any event's code equals `code` exactly.
    pub fn contains_code(&self, code: &str) -> bool {
        self.visits
            .iter()
            .any(|v| v.events.iter().any(|e| e.code == code))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn event(code: &str, ts: &str) -> ClinicalEvent {
        ClinicalEvent {
            domain: Domain::Diagnosis,
            code: code.into(),
            value: None,
            timestamp: date(ts),
        }
    }

    fn one_visit_patient() -> PatientRecord {
        PatientRecord {
            patient_id: "P0".into(),
            birth_year: 1980,
            sex: Sex::Female,
            visits: vec![Visit {
                visit_id: "P0-V0".into(),
                start_date: date("2020-01-01"),
                visit_type: VisitType::Outpatient,
                discharge_type: None,
                events: vec![event("E11", "2020-01-01")],
            }],
        }
    }

    #[test]
    fn valid_record_passes() {
        one_visit_patient().validate().unwrap();
    }

    #[test]
    fn empty_visits_rejected() {
        let mut p = one_visit_patient();
        p.visits.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn lab_without_value_rejected() {
        let mut p = one_visit_patient();
        p.visits[0].events[0].domain = Domain::Lab;
        assert!(p.validate().is_err());
    }

    #[test]
    fn discharge_on_outpatient_rejected() {
        let mut p = one_visit_patient();
        p.visits[0].discharge_type = Some(DischargeType::Home);
        assert!(p.validate().is_err());
    }

    #[test]
    fn nonmonotone_visit_dates_rejected() {
        let mut p = one_visit_patient();
        let mut second = p.visits[0].clone();
        second.visit_id = "P0-V1".into();
        p.visits.push(second);
        assert!(p.validate().is_err());
    }
}
