//! Append-only JSON-lines medical log: one record per diagnosed block and
//! one summary per finished session.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use adscreen_core::detectors::{ClassifierKind, DisfluencyInventory, InteractionalFeatures};
use adscreen_core::dialogue::{DegreeDistribution, DiagnosisDegree};
use adscreen_core::listener::ResponseType;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPairSummary {
    pub index: usize,
    pub human_text: String,
    pub human_t_start: f64,
    pub human_t_end: f64,
    pub robot_text: String,
    pub robot_t_start: f64,
    pub robot_t_end: f64,
    pub response_type: ResponseType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub wall_time: String,
    pub session_id: String,
    pub block_index: usize,
    pub turn_pairs: Vec<TurnPairSummary>,
    pub per_classifier: BTreeMap<ClassifierKind, DegreeDistribution>,
    pub votes: [DiagnosisDegree; 4],
    #[serde(rename = "final")]
    pub final_degree: DiagnosisDegree,
    pub interactional: InteractionalFeatures,
    pub disfluencies: DisfluencyInventory,
    pub tie_broken: bool,
    pub breakdown_flag: bool,
    /// Set when the block size differs from six pairs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub non_standard_block: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub wall_time: String,
    pub session_id: String,
    pub turn_pairs: usize,
    pub blocks: usize,
    pub finals: Vec<DiagnosisDegree>,
    pub breakdown_flag: bool,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MedicalLogRecord {
    Block(BlockRecord),
    SessionSummary(SessionSummary),
}

impl MedicalLogRecord {
    pub fn session_id(&self) -> &str {
        match self {
            MedicalLogRecord::Block(b) => &b.session_id,
            MedicalLogRecord::SessionSummary(s) => &s.session_id,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log records serialize");
        line.push('\n');
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, ServiceError> {
        serde_json::from_str(line).map_err(|e| ServiceError::Parse {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// ISO-8601 UTC timestamp of `origin_s + offset_s` seconds since the epoch.
pub fn wall_time(origin_s: f64, offset_s: f64) -> String {
    let t = origin_s + offset_s;
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::<Utc>::from_timestamp(secs as i64, nanos)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Appends one record as a single `write` on an append-mode file, so
/// concurrent writers never interleave within a line.
pub fn append_medical_log(path: impl AsRef<Path>, record: &MedicalLogRecord) -> Result<(), ServiceError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(record.to_line().as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Reads every record; a torn final line (no trailing newline) is ignored.
pub fn read_medical_log(path: impl AsRef<Path>) -> Result<Vec<MedicalLogRecord>, ServiceError> {
    let text = std::fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ServiceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// A single background writer fed through a queue.
pub struct MedicalLogWriter {
    tx: Option<mpsc::Sender<MedicalLogRecord>>,
    handle: Option<JoinHandle<()>>,
    path: PathBuf,
}

impl MedicalLogWriter {
    pub fn spawn(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let (tx, rx) = mpsc::channel::<MedicalLogRecord>();
        let target = path.clone();
        let handle = std::thread::spawn(move || {
            for record in rx {
                if let Err(e) = append_medical_log(&target, &record) {
                    log::error!("medical log {}: {e}", target.display());
                }
            }
        });
        Self {
            tx: Some(tx),
            handle: Some(handle),
            path,
        }
    }

    pub fn sender(&self) -> mpsc::Sender<MedicalLogRecord> {
        self.tx.clone().expect("writer is open")
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Drains the queue and stops the writer thread. Clones of the sender
    /// must be dropped first.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MedicalLogWriter {
    /// Detaches the thread; it exits once every sender is gone.
    fn drop(&mut self) {
        self.tx.take();
    }
}
