//! Trajectory records and their JSONL file format.
//!
//! Line 1 is a header `{"schema_version": 1, "config_digest": "...", "loss_terms": [...]}`;
//! every following line is one [`TrajectoryEntry`]. Floats are written in
//! shortest round-trip form, so loading reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{text_digest, AgentDecision, AttemptRecord, ParseStatus};
use crate::experts::Feedback;
use crate::loss::LossWeights;
use crate::process::StageReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("trajectory file is empty (missing header)")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Agent decision as recorded in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub raw_reply_digest: String,
    pub attempts: u32,
    pub parse_status: ParseStatus,
    pub clipped: bool,
    pub attempt_log: Vec<AttemptRecord>,
}

impl From<&AgentDecision> for DecisionSummary {
    fn from(d: &AgentDecision) -> Self {
        Self {
            raw_reply_digest: text_digest(&d.raw_reply),
            attempts: d.attempts,
            parse_status: d.parse_status,
            clipped: d.clipped,
            attempt_log: d.history.clone(),
        }
    }
}

/// One stage: the weights it trained with, the feedback on the test panel
/// afterwards, and the decision that chose those weights (absent for stage 0
/// and for non-agent policies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub stage_index: u64,
    pub weights_used: LossWeights,
    pub feedback: Vec<Feedback>,
    pub decision: Option<DecisionSummary>,
    pub stage_report: StageReport,
}

impl TrajectoryEntry {
    pub fn feedback_for(&self, objective: &str) -> Option<&Feedback> {
        self.feedback.iter().find(|f| f.objective_name == objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub schema_version: u32,
    pub config_digest: String,
    #[serde(default)]
    pub loss_terms: Vec<String>,
}

impl TrajectoryHeader {
    pub fn new(config_digest: impl Into<String>, loss_terms: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_digest: config_digest.into(),
            loss_terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: TrajectoryHeader,
    pub entries: Vec<TrajectoryEntry>,
}

/// Append-only writer; every entry is flushed as soon as it is written.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, header: &TrajectoryHeader) -> Result<Self, TrajectoryError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.write_line(header)?;
        Ok(w)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), TrajectoryError> {
        serde_json::to_writer(&mut self.out, value).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn append(&mut self, entry: &TrajectoryEntry) -> Result<(), TrajectoryError> {
        self.write_line(entry)
    }
}

pub fn persist(file: &TrajectoryFile, path: &Path) -> Result<(), TrajectoryError> {
    let mut w = TrajectoryWriter::create(path, &file.header)?;
    for e in &file.entries {
        w.append(e)?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<TrajectoryFile, TrajectoryError> {
    load_from(BufReader::new(File::open(path)?))
}

pub fn load_from<R: BufRead>(reader: R) -> Result<TrajectoryFile, TrajectoryError> {
    let mut lines = reader.lines().enumerate();
    let header: TrajectoryHeader = match lines.next() {
        None => return Err(TrajectoryError::MissingHeader),
        Some((_, line)) => {
            let line = line?;
            // check the version before the full shape so newer headers report clearly
            let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| TrajectoryError::Malformed {
                line: 1,
                message: e.to_string(),
            })?;
            if let Some(v) = raw.get("schema_version").and_then(|v| v.as_u64()) {
                if v != SCHEMA_VERSION as u64 {
                    return Err(TrajectoryError::SchemaVersion { found: v as u32 });
                }
            }
            serde_json::from_value(raw).map_err(|e| TrajectoryError::Malformed {
                line: 1,
                message: e.to_string(),
            })?
        }
    };
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(TrajectoryError::Malformed {
                line: line_no,
                message: "blank line".into(),
            });
        }
        let entry: TrajectoryEntry = serde_json::from_str(&line).map_err(|e| TrajectoryError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(prev) = entries.last().map(|e: &TrajectoryEntry| e.stage_index) {
            if entry.stage_index != prev + 1 {
                return Err(TrajectoryError::Malformed {
                    line: line_no,
                    message: format!("stage {} follows stage {prev}", entry.stage_index),
                });
            }
        }
        entries.push(entry);
    }
    Ok(TrajectoryFile { header, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::FeedbackValues;
    use crate::loss::LossVector;

    pub(crate) fn sample_entry(i: u64) -> TrajectoryEntry {
        TrajectoryEntry {
            stage_index: i,
            weights_used: LossWeights::from_vec_unchecked(vec![1.0, 0.1 * (i + 1) as f64, 0.01]),
            feedback: vec![
                Feedback {
                    objective_name: "psnr".into(),
                    stage_index: i,
                    values: FeedbackValues::Score {
                        per_image: vec![21.123456789012345, 1.0 / 3.0],
                        aggregate: (21.123456789012345 + 1.0 / 3.0) / 2.0,
                    },
                },
                Feedback {
                    objective_name: "critic".into(),
                    stage_index: i,
                    values: FeedbackValues::Textual {
                        per_image: vec!["Image 1: \"good\" quality".into()],
                        aggregate: "Image 1: \"good\" quality".into(),
                    },
                },
            ],
            decision: (i > 0).then(|| DecisionSummary {
                raw_reply_digest: text_digest("reply"),
                attempts: 2,
                parse_status: ParseStatus::Ok,
                clipped: false,
                attempt_log: vec![
                    AttemptRecord {
                        temperature: 0.2,
                        reply: Some("hmm".into()),
                        error: Some("no weight pattern found in reply".into()),
                    },
                    AttemptRecord {
                        temperature: 0.5,
                        reply: Some("reply".into()),
                        error: None,
                    },
                ],
            }),
            stage_report: StageReport {
                mean_composed_loss: 0.1 + 0.2,
                mean_per_term_loss: LossVector::new(vec![1e-300, 0.7, 5e-324]),
                steps_taken: 5000,
            },
        }
    }

    fn header() -> TrajectoryHeader {
        TrajectoryHeader::new("abc", vec!["l1".into(), "edge".into(), "tv".into()])
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let f = TrajectoryFile { header: header(), entries: vec![] };
        persist(&f, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load(&p).unwrap(), f);
    }

    #[test]
    fn three_entries_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let f = TrajectoryFile {
            header: header(),
            entries: (0..3).map(sample_entry).collect(),
        };
        persist(&f, &p).unwrap();
        assert_eq!(load(&p).unwrap(), f);
    }

    #[test]
    fn truncated_last_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        persist(
            &TrajectoryFile {
                header: header(),
                entries: (0..3).map(sample_entry).collect(),
            },
            &p,
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, &text[..text.len() - 20]).unwrap();
        match load(&p) {
            Err(TrajectoryError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected malformed line 4, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_and_gaps() {
        let bad = "{\"schema_version\":2,\"config_digest\":\"x\"}\n";
        assert!(matches!(load_from(bad.as_bytes()), Err(TrajectoryError::SchemaVersion { found: 2 })));
        assert!(matches!(load_from("".as_bytes()), Err(TrajectoryError::MissingHeader)));

        let mut text = serde_json::to_string(&header()).unwrap();
        for i in [0, 2] {
            text.push('\n');
            text.push_str(&serde_json::to_string(&sample_entry(i)).unwrap());
        }
        assert!(matches!(
            load_from(text.as_bytes()),
            Err(TrajectoryError::Malformed { line: 3, .. })
        ));
    }
}
