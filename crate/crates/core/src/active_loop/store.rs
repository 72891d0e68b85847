//! Directory-per-session persistence.
//!
//! ```text
//! <root>/<session_id>/events.jsonl
//! <root>/<session_id>/snapshots/committee-iter-<n>.json
//! ```
//!
//! The event log is the source of truth. Snapshots are written after each
//! retraining for inspection and are never read back during replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};

use super::events::{read_events, replay, EventLog, SessionEvent, SessionSources};
use super::{LabelSubmission, PersonalizedModel, Session};
use crate::committee::Pretrained;
use crate::error::{Error, Result};
use crate::types::Excerpt;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::file(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    /// Ids of every session directory holding an event log, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)
            .map_err(|e| Error::file(&self.root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(EVENTS_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Persists a fresh session, logging its creation.
    pub fn create(
        &self,
        session: Session,
        sources: Option<SessionSources>,
        now: DateTime<Utc>,
    ) -> Result<PersistedSession> {
        if session.iteration() != 0 || !session.annotations().is_empty() {
            return Err(Error::State("only fresh sessions can be persisted".into()));
        }
        let dir = self.session_dir(session.session_id());
        let events = dir.join(EVENTS_FILE);
        if events.exists() {
            return Err(Error::State(format!(
                "session `{}` already exists",
                session.session_id()
            )));
        }
        let mut log = EventLog::open(&events)?;
        log.append(&SessionEvent::SessionCreated {
            session_id: session.session_id().to_string(),
            user_profile: session.user_profile().clone(),
            pool_id: session.pool_id().to_string(),
            config: *session.config(),
            created_at: now,
            sources,
        })?;
        Ok(PersistedSession {
            session,
            log,
            dir,
            finalized_logged: false,
        })
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>> {
        let path = self.session_dir(session_id).join(EVENTS_FILE);
        if !path.is_file() {
            return Err(Error::NotFound {
                kind: "session",
                id: session_id.to_string(),
            });
        }
        read_events(&path)
    }

    /// Reopens a session by replaying its log against `pool` and `base`.
    pub fn open(&self, session_id: &str, pool: Arc<Vec<Excerpt>>, base: Arc<Pretrained>) -> Result<PersistedSession> {
        let events = self.events(session_id)?;
        let session = replay(&events, pool, base)?;
        let dir = self.session_dir(session_id);
        let log = EventLog::open(&dir.join(EVENTS_FILE))?;
        Ok(PersistedSession {
            session,
            log,
            dir,
            finalized_logged: events.iter().any(|e| matches!(e, SessionEvent::Finalized { .. })),
        })
    }
}

/// A session whose every transition is written to its event log before it
/// becomes visible.
#[derive(Debug)]
pub struct PersistedSession {
    session: Session,
    log: EventLog,
    dir: PathBuf,
    finalized_logged: bool,
}

impl PersistedSession {
    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot_path(&self, iteration: usize) -> PathBuf {
        self.dir
            .join(SNAPSHOT_DIR)
            .join(format!("committee-iter-{iteration}.json"))
    }

    pub fn issue_batch(&mut self) -> Result<Vec<String>> {
        let mut next = self.session.clone();
        let batch = next.issue_batch()?;
        self.log.append(&SessionEvent::BatchIssued {
            iteration: next.iteration() + 1,
            excerpt_ids: batch.clone(),
        })?;
        self.session = next;
        Ok(batch)
    }

    pub fn submit(&mut self, labels: &[LabelSubmission], now: DateTime<Utc>) -> Result<()> {
        let mut next = self.session.clone();
        next.submit_annotations(labels, now)?;
        let added = next.annotations()[self.session.annotations().len()..].to_vec();
        self.log.append(&SessionEvent::AnnotationsSubmitted {
            iteration: next.iteration(),
            annotations: added,
        })?;
        self.session = next;
        let snap = self.snapshot_path(self.session.iteration());
        if let Some(parent) = snap.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
        fs::write(&snap, self.session.committee().to_json()?).map_err(|e| Error::file(&snap, e))?;
        Ok(())
    }

    pub fn finalize(&mut self, now: DateTime<Utc>) -> Result<PersonalizedModel> {
        let model = self.session.finalize()?;
        if !self.finalized_logged {
            self.log.append(&SessionEvent::Finalized { at: now })?;
            self.finalized_logged = true;
        }
        Ok(model)
    }
}
