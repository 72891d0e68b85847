//! The personalization loop for one user.
//!
//! ```text
//!   AwaitingBatch --issue_batch--> AwaitingAnnotations --submit--> AwaitingBatch
//!                                                         \--(last iteration)--> Finalized
//! ```
//!
//! The first batch is a seeded random draw of `initial_per_type` excerpts from
//! each source type. Later batches take the unannotated excerpts with the
//! highest consensus entropy. After every submission the committee is
//! rebuilt from its pretraining splits plus all of the session's labels.
//! Every operation validates before mutating, so a rejected call leaves the
//! session untouched.

mod events;
mod store;

pub use events::{read_events, replay, EventLog, SessionEvent, SessionSources};
pub use store::{PersistedSession, SessionStore};

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::committee::{retrain_with_user, Committee, Pretrained, RetrainOptions, UserExample};
use crate::error::{Error, Result, Violation};
use crate::features::apply_scaler;
use crate::types::{validate_pool, Annotation, Excerpt, Quadrant, SourceType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingBatch,
    AwaitingAnnotations,
    Finalized,
}

/// Answer to "if the election were held now, whom would you vote for?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteIntent {
    LeftCandidate,
    RightCandidate,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub display_name: String,
    #[serde(default)]
    pub political_view: String,
    pub vote_intent: VoteIntent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub initial_per_type: usize,
    pub seed: u64,
    /// Sample weight given to each user label during retraining.
    pub user_weight: f64,
    /// Keep each member's pretraining split when retraining.
    pub retain_pretraining: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            max_iterations: 3,
            initial_per_type: 5,
            seed: 0,
            user_weight: 10.0,
            retain_pretraining: true,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iterations == 0 {
            return Err(Error::validation("batch_size and max_iterations must be positive"));
        }
        if self.batch_size != self.initial_per_type * SourceType::ALL.len() {
            return Err(Error::validation(format!(
                "batch_size {} must equal initial_per_type {} times {} source types",
                self.batch_size,
                self.initial_per_type,
                SourceType::ALL.len()
            )));
        }
        if !self.user_weight.is_finite() || self.user_weight < 0.0 {
            return Err(Error::validation("user_weight must be finite and non-negative"));
        }
        Ok(())
    }

    fn retrain_options(&self) -> RetrainOptions {
        RetrainOptions {
            user_weight: self.user_weight,
            retain_pretraining: self.retain_pretraining,
        }
    }
}

/// A label as submitted by an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub excerpt_id: String,
    pub quadrant: Quadrant,
}

impl LabelSubmission {
    pub fn new(excerpt_id: impl Into<String>, quadrant: Quadrant) -> Self {
        Self {
            excerpt_id: excerpt_id.into(),
            quadrant,
        }
    }
}

/// Pool excerpt prepared for scoring: standardized with the committee scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExcerpt {
    pub id: String,
    pub source_type: SourceType,
    pub features: Vec<f64>,
}

/// Frozen output of a finished session.
#[derive(Debug, Clone)]
pub struct PersonalizedModel {
    pub session_id: String,
    pub committee: Arc<Committee>,
    pub annotations: Vec<Annotation>,
    /// Pool excerpts the user never annotated, in pool order.
    pub test_pool: Vec<ScoredExcerpt>,
    pub config: LoopConfig,
    /// Set when every pool excerpt was annotated.
    pub empty_test_pool: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    session_id: String,
    user_profile: UserProfile,
    pool_id: String,
    pool: Arc<Vec<Excerpt>>,
    standardized: Arc<Vec<Vec<f64>>>,
    index: HashMap<String, usize>,
    base: Arc<Pretrained>,
    committee: Arc<Committee>,
    annotations: Vec<Annotation>,
    iteration: usize,
    pending: Vec<String>,
    config: LoopConfig,
    state: SessionState,
}

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        user_profile: UserProfile,
        pool_id: impl Into<String>,
        pool: Arc<Vec<Excerpt>>,
        base: Arc<Pretrained>,
        config: LoopConfig,
    ) -> Result<Self> {
        config.validate()?;
        validate_pool(&pool)?;
        let scaler = &base.committee.scaler;
        let standardized = pool
            .iter()
            .map(|e| apply_scaler(scaler, &e.features).map(|v| v.into_inner()))
            .collect::<Result<Vec<_>>>()?;
        let index = pool.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Ok(Self {
            session_id: session_id.into(),
            user_profile,
            pool_id: pool_id.into(),
            pool,
            standardized: Arc::new(standardized),
            index,
            committee: Arc::new(base.committee.clone()),
            base,
            annotations: Vec::new(),
            iteration: 0,
            pending: Vec::new(),
            config,
            state: SessionState::AwaitingBatch,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn user_profile(&self) -> &UserProfile {
        &self.user_profile
    }

    pub fn pool_id(&self) -> &str {
        &self.pool_id
    }

    pub fn pool(&self) -> &[Excerpt] {
        &self.pool
    }

    pub fn excerpt(&self, id: &str) -> Option<&Excerpt> {
        self.index.get(id).map(|&i| &self.pool[i])
    }

    pub fn committee(&self) -> &Arc<Committee> {
        &self.committee
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn pending(&self) -> &[String] {
        &self.pending
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    fn is_annotated(&self, id: &str) -> bool {
        self.annotations.iter().any(|a| a.excerpt_id == id)
    }

    /// Issues the next query batch: the random initial draw at iteration 0,
    /// the entropy ranking afterwards.
    pub fn issue_batch(&mut self) -> Result<Vec<String>> {
        if self.iteration == 0 {
            self.initial_batch()
        } else {
            self.next_batch()
        }
    }

    fn require_state(&self, want: SessionState, op: &str) -> Result<()> {
        if self.state != want {
            return Err(Error::State(format!(
                "{op} requires state {want:?}, session is {:?}",
                self.state
            )));
        }
        Ok(())
    }

    /// Seeded draw of `initial_per_type` excerpts from every source type.
    ///
    /// The pool is shuffled once, in id order, and each type contributes its
    /// first excerpts in shuffled order; swapping every excerpt's source type
    /// therefore yields the same ids.
    pub fn initial_batch(&mut self) -> Result<Vec<String>> {
        self.require_state(SessionState::AwaitingBatch, "initial_batch")?;
        if self.iteration != 0 {
            return Err(Error::State(format!(
                "initial_batch is only valid at iteration 0, session is at {}",
                self.iteration
            )));
        }
        let per_type = self.config.initial_per_type;
        for t in SourceType::ALL {
            let n = self.pool.iter().filter(|e| e.source_type == t).count();
            if n < per_type {
                return Err(Error::validation(format!(
                    "pool has {n} excerpts of {t}, the initial draw needs {per_type}"
                )));
            }
        }
        let mut ids: Vec<&Excerpt> = self.pool.iter().collect();
        ids.sort_by(|a, b| a.id.cmp(&b.id));
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed));
        let mut taken: HashMap<SourceType, usize> = HashMap::new();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for e in ids {
            let c = taken.entry(e.source_type).or_default();
            if *c < per_type {
                *c += 1;
                batch.push(e.id.clone());
            }
        }
        self.pending = batch.clone();
        self.state = SessionState::AwaitingAnnotations;
        Ok(batch)
    }

    /// Consensus entropy of every unannotated excerpt under the current
    /// committee, in pool order.
    pub fn candidate_entropies(&self) -> Result<Vec<(String, f64)>> {
        self.pool
            .iter()
            .zip(self.standardized.iter())
            .filter(|(e, _)| !self.is_annotated(&e.id))
            .map(|(e, x)| Ok((e.id.clone(), self.committee.entropy(x)?)))
            .collect()
    }

    /// The `batch_size` unannotated excerpts with the highest consensus
    /// entropy, ties broken by ascending id.
    pub fn next_batch(&mut self) -> Result<Vec<String>> {
        self.require_state(SessionState::AwaitingBatch, "next_batch")?;
        if self.iteration == 0 || self.iteration >= self.config.max_iterations {
            return Err(Error::State(format!(
                "next_batch is valid for iterations 1..{}, session is at {}",
                self.config.max_iterations, self.iteration
            )));
        }
        let mut scored = self.candidate_entropies()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let batch: Vec<String> = scored
            .into_iter()
            .take(self.config.batch_size)
            .map(|(id, _)| id)
            .collect();
        self.pending = batch.clone();
        self.state = SessionState::AwaitingAnnotations;
        Ok(batch)
    }

    /// Checks a submission against the pending batch without applying it.
    pub fn check_submission(&self, labels: &[LabelSubmission]) -> Result<()> {
        if self.state != SessionState::AwaitingAnnotations {
            return Err(Error::Protocol(vec![Violation::NoPendingBatch]));
        }
        let pending: HashSet<&str> = self.pending.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        let mut violations = Vec::new();
        for l in labels {
            let id = l.excerpt_id.as_str();
            if !seen.insert(id) {
                violations.push(Violation::Duplicate {
                    excerpt_id: id.to_string(),
                });
            } else if self.is_annotated(id) {
                violations.push(Violation::AlreadyAnnotated {
                    excerpt_id: id.to_string(),
                });
            } else if !pending.contains(id) {
                violations.push(Violation::NotQueried {
                    excerpt_id: id.to_string(),
                });
            }
        }
        let missing: Vec<String> = self
            .pending
            .iter()
            .filter(|id| !seen.contains(id.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            violations.push(Violation::Missing { excerpt_ids: missing });
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(violations))
        }
    }

    /// Accepts labels for exactly the pending batch, retrains the committee
    /// on everything annotated so far and advances the iteration.
    pub fn submit_annotations(&mut self, labels: &[LabelSubmission], now: DateTime<Utc>) -> Result<()> {
        self.check_submission(labels)?;
        let iteration = self.iteration + 1;
        let mut annotations = self.annotations.clone();
        // Store in pending order so logs do not depend on submission order.
        for id in &self.pending {
            let l = labels.iter().find(|l| &l.excerpt_id == id).expect("checked above");
            annotations.push(Annotation {
                excerpt_id: id.clone(),
                label: l.quadrant,
                iteration,
                timestamp: now,
            });
        }
        let committee = self.retrain(&annotations)?;
        self.annotations = annotations;
        self.committee = Arc::new(committee);
        self.iteration = iteration;
        self.pending.clear();
        self.state = if iteration >= self.config.max_iterations {
            SessionState::Finalized
        } else {
            SessionState::AwaitingBatch
        };
        Ok(())
    }

    /// Re-applies a logged batch of annotations, keeping their recorded
    /// timestamps.
    pub(crate) fn apply_logged(&mut self, annotations: &[Annotation]) -> Result<()> {
        let labels: Vec<LabelSubmission> = annotations
            .iter()
            .map(|a| LabelSubmission::new(a.excerpt_id.clone(), a.label))
            .collect();
        let now = annotations
            .first()
            .map(|a| a.timestamp)
            .unwrap_or_else(|| DateTime::<Utc>::from_timestamp(0, 0).expect("epoch"));
        self.submit_annotations(&labels, now)?;
        // Restore per-annotation timestamps verbatim.
        let start = self.annotations.len() - annotations.len();
        for (slot, logged) in self.annotations[start..].iter_mut().zip(annotations) {
            if slot.excerpt_id == logged.excerpt_id {
                slot.timestamp = logged.timestamp;
            }
        }
        Ok(())
    }

    fn retrain(&self, annotations: &[Annotation]) -> Result<Committee> {
        let user: Vec<UserExample> = annotations
            .iter()
            .map(|a| {
                let i = self.index[&a.excerpt_id];
                UserExample {
                    excerpt_id: a.excerpt_id.clone(),
                    features: self.standardized[i].clone(),
                    label: a.label,
                }
            })
            .collect();
        retrain_with_user(
            &self.base.committee,
            &self.base.corpus,
            &user,
            self.config.retrain_options(),
        )
    }

    /// Freezes the finished session for analysis.
    pub fn finalize(&self) -> Result<PersonalizedModel> {
        self.require_state(SessionState::Finalized, "finalize")?;
        let test_pool: Vec<ScoredExcerpt> = self
            .pool
            .iter()
            .zip(self.standardized.iter())
            .filter(|(e, _)| !self.is_annotated(&e.id))
            .map(|(e, x)| ScoredExcerpt {
                id: e.id.clone(),
                source_type: e.source_type,
                features: x.clone(),
            })
            .collect();
        let empty_test_pool = test_pool.is_empty();
        if empty_test_pool {
            tracing::warn!(session = %self.session_id, "every pool excerpt was annotated; test pool is empty");
        }
        Ok(PersonalizedModel {
            session_id: self.session_id.clone(),
            committee: Arc::clone(&self.committee),
            annotations: self.annotations.clone(),
            test_pool,
            config: self.config,
            empty_test_pool,
        })
    }

    /// Verifies the structural invariants; used by tests and after replay.
    pub fn check_invariants(&self) -> Result<()> {
        let annotated: HashSet<&str> = self.annotations.iter().map(|a| a.excerpt_id.as_str()).collect();
        if annotated.len() != self.annotations.len() {
            return Err(Error::State("an excerpt was annotated twice".into()));
        }
        if annotated.iter().any(|id| !self.index.contains_key(*id)) {
            return Err(Error::State("annotation references an unknown excerpt".into()));
        }
        if self.pending.iter().any(|id| annotated.contains(id.as_str())) {
            return Err(Error::State("a pending excerpt is already annotated".into()));
        }
        if self.state == SessionState::AwaitingBatch
            && self.annotations.len() != self.iteration * self.config.batch_size
            && self.annotations.len() + self.config.batch_size <= self.pool.len()
        {
            return Err(Error::State(format!(
                "{} annotations at iteration {}",
                self.annotations.len(),
                self.iteration
            )));
        }
        Ok(())
    }
}
