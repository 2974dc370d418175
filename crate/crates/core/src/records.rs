//! Line-delimited JSON file schemas: raw corpus input, exported dataset
//! records, and model prediction files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Language, RawSample, Violation};
use crate::tagged;

pub const SCHEMA_VERSION: u32 = 1;

/// One line of a raw corpus file. A `language` field, if present, is
/// ignored: the tag is always derived from the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub image_ref: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExportStage {
    D1,
    D2,
    D3,
    #[serde(rename = "quarantined")]
    Quarantined,
}

impl fmt::Display for ExportStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportStage::D1 => "D1",
            ExportStage::D2 => "D2",
            ExportStage::D3 => "D3",
            ExportStage::Quarantined => "quarantined",
        })
    }
}

impl std::str::FromStr for ExportStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(ExportStage::D1),
            "d2" => Ok(ExportStage::D2),
            "d3" => Ok(ExportStage::D3),
            "quarantined" | "quarantine" => Ok(ExportStage::Quarantined),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

/// One line of an exported dataset file. `cot` holds the tagged encoding
/// `<answer>…</answer><thinking>…</thinking>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub id: String,
    pub image_ref: String,
    pub answer: String,
    pub language: Language,
    pub cot: String,
    pub stage: ExportStage,
    pub revision: u32,
    pub violations: Vec<Violation>,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: String,
}

/// Reads a JSON-lines file, skipping blank lines. Line numbers are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::SchemaViolation {
            line: idx + 1,
            field: missing_field(&e).unwrap_or_else(|| "record".to_string()),
            message: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

fn missing_field(e: &serde_json::Error) -> Option<String> {
    let msg = e.to_string();
    let start = msg.find("field `")? + 7;
    let end = msg[start..].find('`')? + start;
    Some(msg[start..end].to_string())
}

/// Parses a raw corpus into samples, rejecting duplicate ids and invalid
/// answers.
pub fn ingest(path: &Path) -> Result<Vec<RawSample>> {
    let records: Vec<(usize, CorpusRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.id.is_empty() {
            return Err(Error::SchemaViolation {
                line,
                field: "id".into(),
                message: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let sample =
            RawSample::with_meta(rec.id, rec.image_ref, rec.answer, rec.meta).map_err(|e| {
                Error::SchemaViolation {
                    line,
                    field: "answer".into(),
                    message: e.to_string(),
                }
            })?;
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordProblem {
    pub line: usize,
    pub name: &'static str,
    pub message: String,
}

impl fmt::Display for RecordProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.name, self.message)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub by_stage: BTreeMap<String, usize>,
    pub problems: Vec<RecordProblem>,
}

/// Checks every record of a dataset file: schema, tagged `cot` encoding,
/// consistency between `cot` and `answer`, language tag and id uniqueness.
pub fn validate_dataset(path: &Path) -> Result<ValidationReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let mut problem = |name: &'static str, message: String| {
            report.problems.push(RecordProblem {
                line: line_no,
                name,
                message,
            })
        };
        let rec: DatasetRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                problem("SchemaViolation", e.to_string());
                continue;
            }
        };
        *report.by_stage.entry(rec.stage.to_string()).or_default() += 1;
        if rec.schema_version != SCHEMA_VERSION {
            problem(
                "SchemaViolation",
                format!("schema_version {} unsupported", rec.schema_version),
            );
        }
        if !seen.insert(rec.id.clone()) {
            problem("DuplicateId", format!("id `{}` repeated", rec.id));
        }
        if rec.language != Language::detect(&rec.answer) {
            problem(
                "SchemaViolation",
                format!("language `{}` does not match answer", rec.language),
            );
        }
        match tagged::parse(&rec.cot) {
            Err(e) => problem(e.name(), e.to_string()),
            Ok(t) => {
                if t.answer != rec.answer {
                    problem(
                        "AnswerMismatch",
                        format!("cot answer `{}` differs from `{}`", t.answer, rec.answer),
                    );
                }
                if t.thinking.trim().is_empty() {
                    problem("SchemaViolation", "empty thinking".to_string());
                }
            }
        }
        if matches!(rec.stage, ExportStage::D2 | ExportStage::D3) && !rec.violations.is_empty() {
            problem(
                "SchemaViolation",
                format!("{} record carries violations", rec.stage),
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingests_well_formed_corpus() {
        let f = file(&[
            r#"{"id":"s1","image_ref":"a.png","answer":"LOVE"}"#,
            "",
            r#"{"id":"s2","image_ref":"b.png","answer":"中国","language":"latin"}"#,
            r#"{"id":"s3","image_ref":"c.png","answer":"Hi 你好","meta":{"src":"ic15"}}"#,
        ]);
        let s = ingest(f.path()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].language, Language::Cjk);
        assert_eq!(s[2].language, Language::Mixed);
        assert_eq!(s[2].meta["src"], "ic15");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = file(&[
            r#"{"id":"s1","image_ref":"a","answer":"A"}"#,
            r#"{"id":"s1","image_ref":"b","answer":"B"}"#,
        ]);
        assert!(matches!(ingest(f.path()), Err(Error::DuplicateId(id)) if id == "s1"));
    }

    #[test]
    fn schema_violations() {
        let f = file(&[r#"{"id":"s1","image_ref":"a","answer":"  "}"#]);
        match ingest(f.path()) {
            Err(Error::SchemaViolation { line, field, .. }) => {
                assert_eq!((line, field.as_str()), (1, "answer"))
            }
            other => panic!("{other:?}"),
        }
        let f = file(&[r#"{"id":"s1","answer":"A"}"#]);
        match ingest(f.path()) {
            Err(Error::SchemaViolation { field, .. }) => assert_eq!(field, "image_ref"),
            other => panic!("{other:?}"),
        }
        let f = file(&["not json"]);
        assert!(matches!(
            ingest(f.path()),
            Err(Error::SchemaViolation { line: 1, .. })
        ));
        assert!(matches!(
            ingest(Path::new("/nonexistent/x.jsonl")),
            Err(Error::StoreUnavailable(_))
        ));
    }

    #[test]
    fn validation_flags_bad_cot() {
        let good = DatasetRecord {
            schema_version: 1,
            id: "a".into(),
            image_ref: "a.png".into(),
            answer: "LOVE".into(),
            language: Language::Latin,
            cot: tagged::emit("LOVE", "letters and context").unwrap(),
            stage: ExportStage::D2,
            revision: 0,
            violations: vec![],
            run_id: "r".into(),
        };
        let mut bad = good.clone();
        bad.id = "b".into();
        bad.cot = "<answer>LOVE<thinking></answer>x</thinking>".into();
        let f = file(&[
            &serde_json::to_string(&good).unwrap(),
            &serde_json::to_string(&bad).unwrap(),
        ]);
        let r = validate_dataset(f.path()).unwrap();
        assert_eq!(r.records, 2);
        assert_eq!(r.problems.len(), 1);
        assert_eq!(
            (r.problems[0].line, r.problems[0].name),
            (2, "MalformedNesting")
        );
    }
}
