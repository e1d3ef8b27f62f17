//! ICD-10 chapter ranges and the 3-character-category → chapter map.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chapter {
    pub start: &'static str,
    pub end: &'static str,
    pub name: &'static str,
}

impl Chapter {
    pub fn id(&self) -> String {
        format!("{}-{}", self.start, self.end)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.start <= category && category <= self.end
    }
}

/// All standard chapters. The first `N_EVALUATED_CHAPTERS` are the
/// higher-level categories used as forecasting tasks.
pub const CHAPTERS: [Chapter; 21] = [
    Chapter { start: "A00", end: "B99", name: "certain infectious and parasitic diseases" },
    Chapter { start: "C00", end: "D49", name: "neoplasms" },
    Chapter { start: "D50", end: "D89", name: "diseases of the blood and blood-forming organs and certain disorders involving the immune mechanism" },
    Chapter { start: "E00", end: "E89", name: "endocrine, nutritional and metabolic diseases" },
    Chapter { start: "F01", end: "F99", name: "mental, behavioral and neurodevelopmental disorders" },
    Chapter { start: "G00", end: "G99", name: "diseases of the nervous system" },
    Chapter { start: "H00", end: "H59", name: "diseases of the eye and adnexa" },
    Chapter { start: "H60", end: "H95", name: "diseases of the ear and mastoid process" },
    Chapter { start: "I00", end: "I99", name: "diseases of the circulatory system" },
    Chapter { start: "J00", end: "J99", name: "diseases of the respiratory system" },
    Chapter { start: "K00", end: "K95", name: "diseases of the digestive system" },
    Chapter { start: "L00", end: "L99", name: "diseases of the skin and subcutaneous tissue" },
    Chapter { start: "M00", end: "M99", name: "diseases of the musculoskeletal system and connective tissue" },
    Chapter { start: "N00", end: "N99", name: "diseases of the genitourinary system" },
    Chapter { start: "O00", end: "O9A", name: "pregnancy, childbirth and the puerperium" },
    Chapter { start: "P00", end: "P96", name: "certain conditions originating in the perinatal period" },
    Chapter { start: "Q00", end: "Q99", name: "congenital malformations, deformations and chromosomal abnormalities" },
    Chapter { start: "R00", end: "R99", name: "symptoms, signs and abnormal clinical and laboratory findings" },
    Chapter { start: "S00", end: "T88", name: "injury, poisoning and certain other consequences of external causes" },
    Chapter { start: "V00", end: "Y99", name: "external causes of morbidity" },
    Chapter { start: "Z00", end: "Z99", name: "factors influencing health status and contact with health services" },
];

pub const N_EVALUATED_CHAPTERS: usize = 14;

pub fn evaluated_chapters() -> &'static [Chapter] {
    &CHAPTERS[..N_EVALUATED_CHAPTERS]
}

/// Finds the chapter by its "A00-B99" style identifier.
pub fn chapter_by_id(id: &str) -> Option<&'static Chapter> {
    CHAPTERS.iter().find(|c| c.id() == id)
}

/// Maps a 3-character diagnosis category onto its ICD-10 chapter.
/// Malformed codes and codes falling into inter-chapter gaps are errors.
pub fn icd_chapter(code: &str) -> Result<&'static Chapter> {
    let ok = code.len() == 3
        && code.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && code.chars().skip(1).all(|c| c.is_ascii_alphanumeric());
    if !ok {
        return Err(Error::Data(format!(
            "malformed diagnosis category {code:?} (expected letter + 2 characters)"
        )));
    }
    CHAPTERS
        .iter()
        .find(|c| c.contains(code))
        .ok_or_else(|| Error::Data(format!("category {code:?} maps to no standard chapter")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_lookup() {
        assert_eq!(icd_chapter("F32").unwrap().id(), "F01-F99");
        assert_eq!(icd_chapter("A00").unwrap().id(), "A00-B99");
        assert_eq!(icd_chapter("D50").unwrap().id(), "D50-D89");
        assert_eq!(icd_chapter("D49").unwrap().id(), "C00-D49");
        assert_eq!(icd_chapter("I50").unwrap().id(), "I00-I99");
        assert_eq!(icd_chapter("O9A").unwrap().id(), "O00-O9A");
        assert_eq!(icd_chapter("T50").unwrap().id(), "S00-T88");
    }

    #[test]
    fn malformed_and_gap_codes_rejected() {
        assert!(icd_chapter("").is_err());
        assert!(icd_chapter("f32").is_err());
        assert!(icd_chapter("F321").is_err());
        // D90–D99 is a gap between chapters.
        assert!(icd_chapter("D95").is_err());
    }

    #[test]
    fn evaluated_chapters_are_the_first_fourteen() {
        let evaluated = evaluated_chapters();
        assert_eq!(evaluated.len(), 14);
        assert_eq!(evaluated[0].id(), "A00-B99");
        assert_eq!(evaluated[13].id(), "N00-N99");
    }
}
