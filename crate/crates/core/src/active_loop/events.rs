//! Append-only JSON-lines event log and replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{LoopConfig, Session, UserProfile};
use crate::committee::Pretrained;
use crate::error::{Error, Result};
use crate::types::{Annotation, Excerpt};

/// Locations a session was created from, so it can be reopened offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSources {
    pub pool_dir: Option<PathBuf>,
    pub committee_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum SessionEvent {
    SessionCreated {
        session_id: String,
        user_profile: UserProfile,
        pool_id: String,
        config: LoopConfig,
        created_at: DateTime<Utc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sources: Option<SessionSources>,
    },
    BatchIssued {
        /// Iteration the batch belongs to (1-based).
        iteration: usize,
        excerpt_ids: Vec<String>,
    },
    AnnotationsSubmitted {
        iteration: usize,
        annotations: Vec<Annotation>,
    },
    Finalized {
        at: DateTime<Utc>,
    },
}

/// Writer half of a session's event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::file(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk.
    pub fn append(&mut self, event: &SessionEvent) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::file(&self.path, e))
    }
}

/// Reads every complete event. A trailing line without its newline is an
/// interrupted write and is skipped; any other malformed line is an error.
pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::file(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionEvent>(line.trim_end()) {
            Ok(ev) => events.push(ev),
            Err(_) if !complete => {
                tracing::warn!(path = %path.display(), line = lineno, "ignoring truncated trailing event");
                break;
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: lineno,
                    column: e.column(),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

/// Rebuilds a session by re-running every logged step.
///
/// Batches are recomputed, not copied, and must match the logged ids; a
/// mismatch means the pool or committee differs from the original run.
pub fn replay(events: &[SessionEvent], pool: Arc<Vec<Excerpt>>, base: Arc<Pretrained>) -> Result<Session> {
    let mut iter = events.iter();
    let mut session = match iter.next() {
        Some(SessionEvent::SessionCreated {
            session_id,
            user_profile,
            pool_id,
            config,
            ..
        }) => Session::new(
            session_id.clone(),
            user_profile.clone(),
            pool_id.clone(),
            pool,
            base,
            *config,
        )?,
        _ => return Err(Error::State("event log does not start with SessionCreated".into())),
    };
    for ev in iter {
        match ev {
            SessionEvent::SessionCreated { .. } => return Err(Error::State("duplicate SessionCreated event".into())),
            SessionEvent::BatchIssued { iteration, excerpt_ids } => {
                if *iteration != session.iteration() + 1 {
                    return Err(Error::State(format!(
                        "batch for iteration {iteration} logged at iteration {}",
                        session.iteration()
                    )));
                }
                let batch = session.issue_batch()?;
                if &batch != excerpt_ids {
                    return Err(Error::State(format!(
                        "replayed batch {batch:?} differs from logged batch {excerpt_ids:?}"
                    )));
                }
            }
            SessionEvent::AnnotationsSubmitted { iteration, annotations } => {
                if *iteration != session.iteration() + 1 {
                    return Err(Error::State(format!(
                        "annotations for iteration {iteration} logged at iteration {}",
                        session.iteration()
                    )));
                }
                session.apply_logged(annotations)?;
            }
            SessionEvent::Finalized { .. } => {
                session.finalize()?;
            }
        }
    }
    session.check_invariants()?;
    Ok(session)
}
