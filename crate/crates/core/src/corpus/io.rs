//! Line-delimited corpus serialization.
//!
//! Layout: the first line is a header object `{"format": "...", "version": N}`,
//! every following line is one JSON-encoded `PatientRecord`. Dates are
//! ISO-8601 (`YYYY-MM-DD`). The format is self-describing and append-friendly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PatientRecord;
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "ehrgpt.corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn save_corpus(corpus: &[PatientRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        format: CORPUS_FORMAT.to_string(),
        version: CORPUS_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    for record in corpus {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<PatientRecord>> {
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
    if header.format != CORPUS_FORMAT {
        return Err(parse_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != CORPUS_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }

    let mut corpus = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
        record
            .validate()
            .map_err(|e| parse_err(idx + 1, e.to_string()))?;
        corpus.push(record);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GeneratorConfig};

    #[test]
    fn empty_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        save_corpus(&[], &path).unwrap();
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn corpus_round_trip_is_structural_identity() {
        let config = GeneratorConfig {
            n_patients: 100,
            seed: 7,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn truncated_record_reports_line_number() {
        let config = GeneratorConfig {
            n_patients: 3,
            seed: 1,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrupt.jsonl");
        save_corpus(&corpus, &path).unwrap();

        // Chop the final record in half.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.pop().unwrap();
        let truncated = &last[..last.len() / 2];
        let mut file = std::fs::File::create(&path).unwrap();
        for line in &lines {
            writeln!(file, "{line}").unwrap();
        }
        writeln!(file, "{truncated}").unwrap();

        let err = load_corpus(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
