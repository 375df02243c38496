//! JSONL dataset ingestion.
//!
//! One JSON object per line: `id`, the input text (`input`, or the aliases
//! `question` / `text`), `references` (non-empty except for code
//! generation), and optional `aux` (test-suite source; required for code
//! generation).

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Ts,
    Mt,
    Cg,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Qa, Task::Ts, Task::Mt, Task::Cg];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Ts => "ts",
            Task::Mt => "mt",
            Task::Cg => "cg",
        }
    }

    /// Quality metrics used when a dataset does not list its own.
    pub fn default_metrics(&self) -> &'static [&'static str] {
        match self {
            Task::Qa => &["rougel"],
            Task::Ts => &["rougel", "alignscore"],
            Task::Mt => &["bleu", "comet", "alignscore"],
            Task::Cg => &["pass@1"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?} (expected qa, ts, mt or cg)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub task: Task,
    pub input: String,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<String>,
}

#[derive(Deserialize)]
struct RawLine {
    id: Option<serde_json::Value>,
    #[serde(alias = "question", alias = "text")]
    input: Option<String>,
    references: Option<Vec<String>>,
    aux: Option<String>,
}

/// A line that could not be turned into an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ingested {
    pub items: Vec<DatasetItem>,
    pub malformed: Vec<Malformed>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate item id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("{bad} of {total} lines malformed, above the allowed fraction {threshold}")]
    TooManyMalformed {
        bad: usize,
        total: usize,
        threshold: f64,
        malformed: Vec<Malformed>,
    },
}

fn parse_line(text: &str, task: Task) -> Result<DatasetItem, String> {
    let raw: RawLine = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err("\"id\" must be a non-empty string or a number".into()),
        None => return Err("missing \"id\"".into()),
    };
    let input = raw.input.ok_or("missing \"input\"")?;
    let references = raw.references.unwrap_or_default();
    if task == Task::Cg {
        if raw.aux.is_none() {
            return Err("code generation items need \"aux\" (test-suite source)".into());
        }
    } else if references.is_empty() {
        return Err("missing or empty \"references\"".into());
    }
    Ok(DatasetItem {
        id,
        task,
        input,
        references,
        aux: raw.aux,
    })
}

/// Parses JSONL from a reader. Blank lines are skipped; malformed lines are
/// collected with their 1-based line numbers. The run fails when the
/// malformed fraction exceeds `max_malformed_fraction` or an id repeats.
pub fn ingest_reader<R: BufRead>(
    reader: R,
    task: Task,
    max_malformed_fraction: f64,
) -> Result<Ingested, IngestError> {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    let mut total = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|source| IngestError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_line(&text, task) {
            Ok(item) => {
                if !seen.insert(item.id.clone()) {
                    return Err(IngestError::DuplicateId {
                        id: item.id,
                        line: line_no,
                    });
                }
                out.items.push(item);
            }
            Err(reason) => out.malformed.push(Malformed {
                line: line_no,
                reason,
            }),
        }
    }
    let bad = out.malformed.len();
    if bad > 0 && bad as f64 > max_malformed_fraction * total as f64 {
        return Err(IngestError::TooManyMalformed {
            bad,
            total,
            threshold: max_malformed_fraction,
            malformed: out.malformed,
        });
    }
    Ok(out)
}

pub fn ingest(path: &Path, task: Task, max_malformed_fraction: f64) -> Result<Ingested, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file), task, max_malformed_fraction).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Writes items in the canonical line format read by [`ingest`].
pub fn write_jsonl<W: Write>(mut w: W, items: &[DatasetItem]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        input: &'a str,
        references: &'a [String],
        #[serde(skip_serializing_if = "Option::is_none")]
        aux: Option<&'a str>,
    }
    for it in items {
        let line = Line {
            id: &it.id,
            input: &it.input,
            references: &it.references,
            aux: it.aux.as_deref(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, task: Task) -> Result<Ingested, IngestError> {
        ingest_reader(text.as_bytes(), task, 0.5)
    }

    #[test]
    fn three_valid_lines() {
        let text = r#"{"id": "a", "question": "Q1?", "references": ["x"]}
{"id": "b", "question": "Q2?", "references": ["y", "z"]}

{"id": 3, "input": "Q3?", "references": ["w"]}
"#;
        let got = read(text, Task::Qa).unwrap();
        assert_eq!(got.items.len(), 3);
        assert_eq!(got.items[2].id, "3");
        assert!(got.malformed.is_empty());
    }

    #[test]
    fn missing_references_reported_with_line() {
        let text = r#"{"id": "a", "question": "Q1?", "references": ["x"]}
{"id": "b", "question": "Q2?"}
{"id": "c", "question": "Q3?", "references": ["x"]}"#;
        let got = read(text, Task::Qa).unwrap();
        assert_eq!(got.items.len(), 2);
        assert_eq!(got.malformed.len(), 1);
        assert_eq!(got.malformed[0].line, 2);
        assert!(got.malformed[0].reason.contains("references"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"{"id": "a", "text": "x", "references": ["x"]}
{"id": "a", "text": "y", "references": ["y"]}"#;
        assert!(matches!(
            read(text, Task::Ts),
            Err(IngestError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_threshold() {
        let text = "not json\n{\"id\": \"a\", \"text\": \"x\", \"references\": [\"r\"]}\n";
        assert!(ingest_reader(text.as_bytes(), Task::Mt, 0.5).is_ok());
        assert!(matches!(
            ingest_reader(text.as_bytes(), Task::Mt, 0.4),
            Err(IngestError::TooManyMalformed { bad: 1, total: 2, .. })
        ));
    }

    #[test]
    fn code_items_need_aux_not_references() {
        let ok = r#"{"id": "f", "text": "def f():", "aux": "assert f() is None"}"#;
        assert_eq!(read(ok, Task::Cg).unwrap().items.len(), 1);
        let bad = r#"{"id": "f", "text": "def f():", "references": ["pass"]}"#;
        let got = ingest_reader(bad.as_bytes(), Task::Cg, 1.0).unwrap();
        assert_eq!(got.malformed.len(), 1);
    }

    #[test]
    fn write_then_read_round_trips() {
        let text = r#"{"id": "a", "question": "Q \"1\"?", "references": ["x", "y"]}
{"id": "b", "question": "Q2?", "references": ["y"], "aux": "extra"}"#;
        let items = read(text, Task::Qa).unwrap().items;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &items).unwrap();
        let again = ingest_reader(buf.as_slice(), Task::Qa, 0.0).unwrap().items;
        assert_eq!(items, again);
    }

    proptest::proptest! {
        #[test]
        fn any_items_round_trip(
            rows in proptest::collection::vec(("\\PC{0,12}", proptest::collection::vec("\\PC{0,8}", 1..3)), 0..6)
        ) {
            let items: Vec<DatasetItem> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (input, references))| DatasetItem {
                    id: format!("id{i}"),
                    task: Task::Ts,
                    input,
                    references,
                    aux: None,
                })
                .collect();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &items).unwrap();
            let back = ingest_reader(buf.as_slice(), Task::Ts, 0.0).unwrap();
            proptest::prop_assert_eq!(back.items, items);
        }
    }
}
