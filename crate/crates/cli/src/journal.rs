//! Append-only JSONL journal of completed work.
//!
//! Every finished generation, quality score and quarantine decision is
//! appended as one line and flushed immediately, so an interrupted run can
//! resume by replaying the journal and skipping completed units. A
//! truncated final line (from a crash mid-write) is ignored on replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use declab_core::{DecodeConfig, GenerationRecord};
use serde::{Deserialize, Serialize};

/// Identifies one decoding unit: a dataset item under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitKey {
    pub dataset: String,
    pub item: String,
    pub config: DecodeConfig,
}

impl UnitKey {
    /// Canonical string form used for lookups.
    pub fn canonical(&self) -> String {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        format!("{}\t{}\t{}", self.dataset, self.item, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Entry {
    Generated {
        key: UnitKey,
        /// Detokenized output handed to quality scorers.
        text: String,
        record: GenerationRecord,
    },
    Scored {
        key: UnitKey,
        metric: String,
        score: f64,
    },
    Quarantined {
        key: UnitKey,
        stage: String,
        reason: String,
    },
}

/// Why a unit was set aside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantine {
    pub stage: String,
    pub reason: String,
}

/// Quarantine stage name for a failed score.
pub fn score_stage(metric: &str) -> String {
    format!("score:{metric}")
}

pub const DECODE_STAGE: &str = "decode";

/// A finished generation as stored in the journal.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub record: GenerationRecord,
}

/// Replayed journal contents keyed by [`UnitKey::canonical`].
#[derive(Debug, Clone, Default)]
pub struct JournalState {
    pub generated: BTreeMap<String, Generation>,
    pub scores: BTreeMap<(String, String), f64>,
    pub quarantined: BTreeMap<String, Quarantine>,
    pub lines: usize,
}

impl JournalState {
    pub fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Generated { key, text, record } => {
                let k = key.canonical();
                self.quarantined.remove(&k);
                self.generated.insert(k, Generation { text, record });
            }
            Entry::Scored { key, metric, score } => {
                let k = key.canonical();
                if self.quarantined.get(&k).is_some_and(|q| q.stage == score_stage(&metric)) {
                    self.quarantined.remove(&k);
                }
                self.scores.insert((k, metric), score);
            }
            Entry::Quarantined { key, stage, reason } => {
                self.quarantined
                    .insert(key.canonical(), Quarantine { stage, reason });
            }
        }
    }

    pub fn score(&self, key: &str, metric: &str) -> Option<f64> {
        self.scores.get(&(key.to_owned(), metric.to_owned())).copied()
    }

    /// Reads a journal file; a missing file is an empty journal.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let mut state = Self::default();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(state),
            Err(e) => return Err(e),
        };
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
        let last = lines.len();
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Entry>(&line) {
                Ok(e) => {
                    state.apply(e);
                    state.lines += 1;
                }
                Err(_) if i + 1 == last => {
                    tracing::warn!("ignoring truncated final journal line {}", i + 1);
                }
                Err(e) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("journal line {}: {e}", i + 1),
                    ))
                }
            }
        }
        Ok(state)
    }
}

/// Thread-safe appending writer.
pub struct Journal {
    out: Mutex<BufWriter<File>>,
}

impl Journal {
    /// Opens for appending, first cutting off any partial final line so new
    /// entries start on a fresh line.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Ok(bytes) = std::fs::read(path) {
            if bytes.last().is_some_and(|&b| b != b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, entry: &Entry) -> std::io::Result<()> {
        let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        let mut w = self.out.lock().expect("journal lock poisoned");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()
    }
}
