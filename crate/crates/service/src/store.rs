//! Append-only feedback log.
//!
//! One JSON record per line. A classification appends a new record with the
//! next id; a review appends a superseding version of an existing record,
//! and the latest version of each id wins. The file is locked exclusively
//! for the lifetime of the store.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use cira_core::{Label, Prediction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Unreviewed,
    Confirmed,
    Corrected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Unreviewed => "unreviewed",
            Verdict::Confirmed => "confirmed",
            Verdict::Corrected => "corrected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub id: u64,
    pub text: String,
    pub predicted_label: Label,
    pub confidence: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_label: Option<Label>,
    pub timestamp_ms: u64,
}

impl FeedbackRecord {
    fn check(&self) -> Result<(), String> {
        match (self.verdict, self.corrected_label) {
            (Verdict::Corrected, Some(l)) if l == self.predicted_label => {
                Err("corrected label equals the prediction".into())
            }
            (Verdict::Corrected, None) => Err("corrected record without corrected_label".into()),
            (Verdict::Unreviewed | Verdict::Confirmed, Some(_)) => {
                Err("corrected_label present on a record that is not corrected".into())
            }
            _ => Ok(()),
        }
    }

    /// The label a human signed off on, if any.
    pub fn reviewed_label(&self) -> Option<Label> {
        match self.verdict {
            Verdict::Unreviewed => None,
            Verdict::Confirmed => Some(self.predicted_label),
            Verdict::Corrected => self.corrected_label,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("feedback store {0} is locked by another process")]
    Locked(PathBuf),

    #[error("feedback store {path} is corrupt at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("feedback store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no record with id {0}")]
    UnknownRecord(u64),

    #[error("record {0} has already been reviewed")]
    AlreadyReviewed(u64),

    #[error("corrected label equals the predicted label")]
    NotACorrection,

    #[error("verdict \"corrected\" requires corrected_label")]
    MissingCorrectedLabel,

    #[error("corrected_label is only allowed with verdict \"corrected\"")]
    UnexpectedCorrectedLabel,

    #[error("verdict must be confirmed or corrected")]
    InvalidVerdict,

    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What happened to a torn or unreadable last line when the store opened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub dropped_bytes: u64,
    pub line: usize,
}

struct Inner {
    file: File,
    records: BTreeMap<u64, FeedbackRecord>,
    /// Length of the valid log.
    len: u64,
}

pub struct FeedbackStore {
    path: PathBuf,
    inner: Mutex<Inner>,
    recovery: Option<Recovery>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl FeedbackStore {
    /// Opens (creating if needed) and locks the log, replaying every record.
    /// A torn or unparsable final line is truncated away and reported via
    /// [`FeedbackStore::recovery`]; any earlier bad line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(path)),
            Err(std::fs::TryLockError::Error(e)) => return Err(io(e)),
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let (records, valid_len, recovery) = replay(&path, &bytes)?;
        if valid_len < bytes.len() as u64 {
            file.set_len(valid_len).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        if let Some(r) = &recovery {
            tracing::warn!(
                "dropped {} bytes of a torn record at line {} of {}",
                r.dropped_bytes,
                r.line,
                path.display()
            );
        }
        Ok(Self {
            path,
            inner: Mutex::new(Inner {
                file,
                records,
                len: valid_len,
            }),
            recovery,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recovery(&self) -> Option<&Recovery> {
        self.recovery.as_ref()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn write_line(&self, inner: &mut Inner, record: &FeedbackRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        if let Err(e) = inner.file.write_all(line.as_bytes()).and_then(|_| inner.file.flush()) {
            // drop whatever part of the line made it to disk
            let _ = inner.file.set_len(inner.len);
            return Err(io(e));
        }
        inner.len += line.len() as u64;
        Ok(())
    }

    /// Appends a new unreviewed record for a classification.
    pub fn append(&self, text: &str, prediction: &Prediction) -> Result<FeedbackRecord, StoreError> {
        let mut inner = self.lock();
        let id = inner.records.keys().next_back().map_or(1, |max| max + 1);
        let record = FeedbackRecord {
            id,
            text: text.to_owned(),
            predicted_label: prediction.label,
            confidence: prediction.confidence,
            verdict: Verdict::Unreviewed,
            corrected_label: None,
            timestamp_ms: now_ms(),
        };
        self.write_line(&mut inner, &record)?;
        inner.records.insert(id, record.clone());
        Ok(record)
    }

    /// Appends a reviewed version of an unreviewed record.
    pub fn review(
        &self,
        id: u64,
        verdict: Verdict,
        corrected_label: Option<Label>,
    ) -> Result<FeedbackRecord, ReviewError> {
        let mut inner = self.lock();
        let Some(current) = inner.records.get(&id).cloned() else {
            return Err(ReviewError::UnknownRecord(id));
        };
        if current.verdict != Verdict::Unreviewed {
            return Err(ReviewError::AlreadyReviewed(id));
        }
        match (verdict, corrected_label) {
            (Verdict::Unreviewed, _) => return Err(ReviewError::InvalidVerdict),
            (Verdict::Confirmed, Some(_)) => return Err(ReviewError::UnexpectedCorrectedLabel),
            (Verdict::Corrected, None) => return Err(ReviewError::MissingCorrectedLabel),
            (Verdict::Corrected, Some(l)) if l == current.predicted_label => {
                return Err(ReviewError::NotACorrection)
            }
            _ => {}
        }
        let record = FeedbackRecord {
            verdict,
            corrected_label,
            timestamp_ms: now_ms(),
            ..current
        };
        self.write_line(&mut inner, &record)?;
        inner.records.insert(id, record.clone());
        Ok(record)
    }

    pub fn get(&self, id: u64) -> Option<FeedbackRecord> {
        self.lock().records.get(&id).cloned()
    }

    /// Latest versions of the `n` most recently created records, newest first.
    pub fn read_recent(&self, n: usize) -> Vec<FeedbackRecord> {
        self.lock().records.values().rev().take(n).cloned().collect()
    }

    /// Number of distinct records.
    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_id(&self) -> Option<u64> {
        self.lock().records.keys().next_back().copied()
    }
}

type Replay = (BTreeMap<u64, FeedbackRecord>, u64, Option<Recovery>);

fn replay(path: &Path, bytes: &[u8]) -> Result<Replay, StoreError> {
    let mut records: BTreeMap<u64, FeedbackRecord> = BTreeMap::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (line, consumed, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(pos) => (&rest[..pos], pos + 1, true),
            None => (rest, rest.len(), false),
        };
        let is_last = offset + consumed == bytes.len();
        let parsed = if complete {
            parse_line(line, &records)
        } else {
            Err("record is not newline-terminated".to_string())
        };
        match parsed {
            Ok(record) => {
                records.insert(record.id, record);
                offset += consumed;
            }
            Err(_) if is_last => {
                let recovery = Recovery {
                    dropped_bytes: consumed as u64,
                    line: line_no,
                };
                return Ok((records, offset as u64, Some(recovery)));
            }
            Err(message) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                })
            }
        }
    }
    Ok((records, offset as u64, None))
}

fn parse_line(line: &[u8], records: &BTreeMap<u64, FeedbackRecord>) -> Result<FeedbackRecord, String> {
    let record: FeedbackRecord = serde_json::from_slice(line).map_err(|e| e.to_string())?;
    record.check()?;
    let max = records.keys().next_back().copied().unwrap_or(0);
    match records.get(&record.id) {
        Some(previous) if previous.verdict != Verdict::Unreviewed => {
            Err(format!("record {} is reviewed twice", record.id))
        }
        Some(previous) if previous.text != record.text || previous.predicted_label != record.predicted_label => {
            Err(format!("record {} changes its text or prediction", record.id))
        }
        Some(_) => Ok(record),
        None if record.id == max + 1 => Ok(record),
        None => Err(format!("record id {} does not follow {max}", record.id)),
    }
}
