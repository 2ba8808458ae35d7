//! Session log persistence as line-delimited JSON.
//!
//! One file per session: a header record, one record per turn, one snapshot
//! record per completed agent counter-offer, and a footer with the outcome
//! and metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentKind;
use crate::domain::{Caps, Outcome, SessionLog, TaskIssue, Turn};
use crate::metrics::MetricsReport;
use crate::session::{Condition, Session, TurnSnapshot};

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const LOG_FILE_NAME: &str = "session.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format_version: u32,
    pub session_id: String,
    pub condition: Condition,
    pub agent: AgentKind,
    pub seed: u64,
    pub dimensionality: usize,
    pub caps: Caps,
    pub task: Vec<TaskIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFooter {
    pub outcome: Option<Outcome>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(SessionHeader),
    Turn(Turn),
    Snapshot(TurnSnapshot),
    Footer(SessionFooter),
}

/// A decoded log file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession {
    pub header: SessionHeader,
    pub turns: Vec<Turn>,
    pub snapshots: Vec<TurnSnapshot>,
    pub footer: Option<SessionFooter>,
}

impl StoredSession {
    pub fn to_log(&self) -> SessionLog {
        SessionLog {
            session_id: self.header.session_id.clone(),
            task: self.header.task.clone(),
            dimensionality: self.header.dimensionality,
            turns: self.turns.clone(),
            outcome: self.footer.as_ref().and_then(|f| f.outcome.clone()),
            caps: self.header.caps,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Layout { line: usize, message: String },
    #[error("log is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_records(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("log records serialize"));
        out.push('\n');
    }
    out
}

/// Encodes a finished or live log. Snapshots are interleaved after the turn
/// they belong to.
pub fn encode_log(
    log: &SessionLog,
    condition: Condition,
    agent: AgentKind,
    seed: u64,
    snapshots: &[TurnSnapshot],
    metrics: Option<&MetricsReport>,
) -> String {
    let mut records = vec![LogRecord::Header(SessionHeader {
        format_version: LOG_FORMAT_VERSION,
        session_id: log.session_id.clone(),
        condition,
        agent,
        seed,
        dimensionality: log.dimensionality,
        caps: log.caps,
        task: log.task.clone(),
    })];
    for turn in &log.turns {
        records.push(LogRecord::Turn(turn.clone()));
        records.extend(
            snapshots
                .iter()
                .filter(|s| s.turn_number == turn.turn_number)
                .cloned()
                .map(LogRecord::Snapshot),
        );
    }
    if let Some(metrics) = metrics {
        records.push(LogRecord::Footer(SessionFooter {
            outcome: log.outcome.clone(),
            metrics: metrics.clone(),
        }));
    }
    encode_records(&records)
}

pub fn encode_session(session: &Session, metrics: &MetricsReport) -> String {
    let config = session.config();
    encode_log(
        session.log(),
        config.condition,
        config.agent,
        config.seed,
        session.snapshots(),
        Some(metrics),
    )
}

pub fn decode_log(text: &str) -> Result<StoredSession, StoreError> {
    let mut stored: Option<StoredSession> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord =
            serde_json::from_str(line).map_err(|source| StoreError::Json { line: line_no, source })?;
        let layout = |message: &str| StoreError::Layout {
            line: line_no,
            message: message.to_owned(),
        };
        match (record, stored.as_mut()) {
            (LogRecord::Header(header), None) => {
                stored = Some(StoredSession {
                    header,
                    turns: Vec::new(),
                    snapshots: Vec::new(),
                    footer: None,
                })
            }
            (LogRecord::Header(_), Some(_)) => return Err(layout("second header")),
            (_, None) => return Err(layout("record before header")),
            (_, Some(s)) if s.footer.is_some() => return Err(layout("record after footer")),
            (LogRecord::Turn(turn), Some(s)) => s.turns.push(turn),
            (LogRecord::Snapshot(snap), Some(s)) => s.snapshots.push(snap),
            (LogRecord::Footer(footer), Some(s)) => s.footer = Some(footer),
        }
    }
    stored.ok_or(StoreError::Empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistOutcome {
    Written,
    /// An identical log was already stored.
    Unchanged,
}

pub trait LogStore: Send + Sync {
    fn persist(&self, session_id: &str, contents: &str) -> io::Result<PersistOutcome>;
}

/// Stores logs under `root/<session_id>/session.jsonl`.
#[derive(Debug, Clone)]
pub struct FsLogStore {
    root: PathBuf,
}

impl FsLogStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id).join(LOG_FILE_NAME)
    }

    pub fn load(&self, session_id: &str) -> Result<StoredSession, StoreError> {
        decode_log(&fs::read_to_string(self.path_for(session_id))?)
    }
}

impl LogStore for FsLogStore {
    fn persist(&self, session_id: &str, contents: &str) -> io::Result<PersistOutcome> {
        if session_id.is_empty() || session_id.contains(['/', '\\']) || session_id.starts_with('.') {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("unusable session id {session_id:?}"),
            ));
        }
        let path = self.path_for(session_id);
        match fs::read_to_string(&path) {
            Ok(existing) if existing == contents => return Ok(PersistOutcome::Unchanged),
            Ok(_) => {
                return Err(io::Error::new(
                    io::ErrorKind::AlreadyExists,
                    format!("a different log is already stored at {}", path.display()),
                ))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let dir = path.parent().expect("log path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{LOG_FILE_NAME}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(PersistOutcome::Written)
    }
}

/// Keeps logs in memory, keyed by session id.
#[derive(Debug, Default)]
pub struct MemoryLogStore {
    logs: Mutex<BTreeMap<String, String>>,
}

impl MemoryLogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, session_id: &str) -> Option<String> {
        self.lock().get(session_id).cloned()
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.lock().clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, String>> {
        self.logs.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl LogStore for MemoryLogStore {
    fn persist(&self, session_id: &str, contents: &str) -> io::Result<PersistOutcome> {
        let mut logs = self.lock();
        match logs.get(session_id) {
            Some(existing) if existing == contents => Ok(PersistOutcome::Unchanged),
            Some(_) => Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("a different log is already stored for {session_id}"),
            )),
            None => {
                logs.insert(session_id.to_owned(), contents.to_owned());
                Ok(PersistOutcome::Written)
            }
        }
    }
}
