//! Gated audit sessions.
//!
//! A session walks a fixed stage order. Generation for every model starts the
//! moment the prompt is accepted; outputs are revealed in two steps: first
//! only the primary model, then all models side by side. Answers may be
//! rewritten while their stage is current and are frozen once the session
//! moves on.

mod questions;
mod repo;
mod stage;

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

pub use questions::{CatalogError, Question, QuestionCatalog};
pub use repo::{DirSessionRepo, MemorySessionRepo, SessionRepo};
pub use stage::WorkflowStage;

use crate::clock::SharedClock;
use crate::orchestrator::{JobState, Orchestrator, OrchestratorError};
use crate::registry::ModelRegistry;
use crate::report::{AuditReport, ReportBook, ReportError};
use crate::store::{ImageRecord, ImageStore};

pub const MAX_PROMPT_CHARS: usize = 1000;

/// Idle time after which an unfinished session may be collected.
pub const DEFAULT_IDLE_TTL_HOURS: i64 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionAnswer {
    pub question_id: String,
    pub stage: WorkflowStage,
    pub text: String,
    pub answered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSession {
    pub session_id: String,
    pub prompt: String,
    pub stage: WorkflowStage,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub answers: Vec<QuestionAnswer>,
    /// model id → generation job id, in display order.
    pub job_ids: IndexMap<String, String>,
    pub primary_model_id: String,
    pub finalized_report_id: Option<String>,
    pub stage_completed_at: IndexMap<WorkflowStage, DateTime<Utc>>,
}

impl AuditSession {
    pub fn answers_for(&self, stage: WorkflowStage) -> impl Iterator<Item = &QuestionAnswer> {
        self.answers.iter().filter(move |a| a.stage == stage)
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.job_ids.keys().cloned().collect()
    }
}

/// What the auditor may see for one model right now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutputs {
    /// `None` when the generation job is no longer tracked (e.g. after a
    /// restart); images are still served from the store.
    pub status: Option<JobState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt has {0} characters, the limit is {MAX_PROMPT_CHARS}")]
    PromptTooLong(usize),
    #[error("model `{0}` is not registered or not enabled")]
    UnknownModel(String),
    #[error("no models selected")]
    NoModels,
    #[error("model `{0}` selected twice")]
    DuplicateModel(String),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("question `{question_id}` belongs to {question_stage:?}, session is at {current:?}")]
    WrongStage {
        question_id: String,
        question_stage: Option<WorkflowStage>,
        current: WorkflowStage,
    },
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("answer text is empty")]
    EmptyAnswer,
    #[error("unanswered questions: {0:?}")]
    UnansweredQuestions(Vec<String>),
    #[error("the primary model's generation failed")]
    PrimaryGenerationFailed,
    #[error("the primary model is still generating")]
    PrimaryGenerationPending,
    #[error("session is already completed")]
    AlreadyCompleted,
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("session persistence failed: {0}")]
    Persist(String),
}

pub struct SessionManager {
    registry: Arc<ModelRegistry>,
    catalog: Arc<QuestionCatalog>,
    orchestrator: Arc<Orchestrator>,
    store: Arc<ImageStore>,
    reports: Arc<ReportBook>,
    repo: Arc<dyn SessionRepo>,
    clock: SharedClock,
    idle_ttl: Duration,
    sessions: RwLock<HashMap<String, Arc<Mutex<AuditSession>>>>,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager")
            .field("sessions", &self.sessions.read().len())
            .finish_non_exhaustive()
    }
}

impl SessionManager {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        registry: Arc<ModelRegistry>,
        catalog: Arc<QuestionCatalog>,
        orchestrator: Arc<Orchestrator>,
        store: Arc<ImageStore>,
        reports: Arc<ReportBook>,
        repo: Arc<dyn SessionRepo>,
        clock: SharedClock,
    ) -> Self {
        Self {
            registry,
            catalog,
            orchestrator,
            store,
            reports,
            repo,
            clock,
            idle_ttl: Duration::hours(DEFAULT_IDLE_TTL_HOURS),
            sessions: RwLock::default(),
        }
    }

    pub fn with_idle_ttl(mut self, ttl: Duration) -> Self {
        self.idle_ttl = ttl;
        self
    }

    /// Loads previously persisted sessions from the repository.
    pub fn restore(&self) -> Result<usize, SessionError> {
        let loaded = self.repo.load_all().map_err(SessionError::Persist)?;
        let mut sessions = self.sessions.write();
        let n = loaded.len();
        for s in loaded {
            sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(n)
    }

    pub fn catalog(&self) -> &QuestionCatalog {
        &self.catalog
    }

    pub fn reports(&self) -> &ReportBook {
        &self.reports
    }

    fn cell(&self, session_id: &str) -> Result<Arc<Mutex<AuditSession>>, SessionError> {
        self.sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| SessionError::SessionNotFound(session_id.to_string()))
    }

    fn persist(&self, session: &AuditSession) -> Result<(), SessionError> {
        self.repo.save(session).map_err(SessionError::Persist)
    }

    /// Validates the prompt and model set, starts generation for every model
    /// and opens the session at the expectation questions. The first model in
    /// `model_set` is the one revealed alone.
    pub fn create_session(
        &self,
        prompt: &str,
        model_set: &[String],
    ) -> Result<AuditSession, SessionError> {
        if prompt.trim().is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        let len = prompt.chars().count();
        if len > MAX_PROMPT_CHARS {
            return Err(SessionError::PromptTooLong(len));
        }
        if model_set.is_empty() {
            return Err(SessionError::NoModels);
        }
        let mut seen = std::collections::HashSet::new();
        for m in model_set {
            match self.registry.get(m) {
                Some(spec) if spec.enabled => {}
                _ => return Err(SessionError::UnknownModel(m.clone())),
            }
            if !seen.insert(m) {
                return Err(SessionError::DuplicateModel(m.clone()));
            }
        }

        let session_id = uuid::Uuid::new_v4().to_string();
        let jobs = self
            .orchestrator
            .enqueue_jobs(&session_id, prompt, model_set)?;
        let now = self.clock.now();
        let mut stage_completed_at = IndexMap::new();
        stage_completed_at.insert(WorkflowStage::PromptEntry, now);
        let session = AuditSession {
            session_id: session_id.clone(),
            prompt: prompt.to_string(),
            stage: WorkflowStage::ExpectationQuestions,
            created_at: now,
            updated_at: now,
            answers: Vec::new(),
            job_ids: jobs
                .iter()
                .map(|j| (j.model_id.clone(), j.job_id.clone()))
                .collect(),
            primary_model_id: model_set[0].clone(),
            finalized_report_id: None,
            stage_completed_at,
        };
        if let Err(e) = self.persist(&session) {
            self.orchestrator.forget_session(&session_id);
            return Err(e);
        }
        self.sessions
            .write()
            .insert(session_id.clone(), Arc::new(Mutex::new(session.clone())));
        info!(session = %session_id, models = model_set.len(), "session created");
        Ok(session)
    }

    pub fn get(&self, session_id: &str) -> Result<AuditSession, SessionError> {
        Ok(self.cell(session_id)?.lock().clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn record_answer(
        &self,
        session_id: &str,
        question_id: &str,
        text: &str,
    ) -> Result<AuditSession, SessionError> {
        let cell = self.cell(session_id)?;
        let mut session = cell.lock();
        let question = self
            .catalog
            .get(question_id)
            .ok_or_else(|| SessionError::UnknownQuestion(question_id.to_string()))?;
        if session.stage != question.stage {
            return Err(SessionError::WrongStage {
                question_id: question_id.to_string(),
                question_stage: Some(question.stage),
                current: session.stage,
            });
        }
        if text.trim().is_empty() {
            return Err(SessionError::EmptyAnswer);
        }
        let now = self.clock.now();
        let mut updated = session.clone();
        match updated
            .answers
            .iter_mut()
            .find(|a| a.question_id == question_id)
        {
            Some(existing) => {
                existing.text = text.to_string();
                existing.answered_at = now;
            }
            None => updated.answers.push(QuestionAnswer {
                question_id: question_id.to_string(),
                stage: question.stage,
                text: text.to_string(),
                answered_at: now,
            }),
        }
        updated.updated_at = now;
        self.persist(&updated)?;
        *session = updated;
        Ok(session.clone())
    }

    fn primary_ready(&self, session: &AuditSession) -> Result<(), SessionError> {
        let state = self
            .orchestrator
            .job_status(&session.session_id)
            .ok()
            .and_then(|s| s.get(&session.primary_model_id).map(|j| j.state));
        match state {
            Some(JobState::Succeeded) => Ok(()),
            Some(JobState::Failed | JobState::Canceled) => {
                Err(SessionError::PrimaryGenerationFailed)
            }
            Some(_) => Err(SessionError::PrimaryGenerationPending),
            None => {
                // Job no longer tracked; fall back to what the store holds.
                let stored = self
                    .store
                    .query_by_session(&session.session_id)
                    .iter()
                    .any(|r| r.model_id == session.primary_model_id);
                if stored {
                    Ok(())
                } else {
                    Err(SessionError::PrimaryGenerationFailed)
                }
            }
        }
    }

    /// Moves the session to its next stage once the current stage's
    /// requirements hold. Entering `Completed` assembles the report.
    pub fn advance_stage(&self, session_id: &str) -> Result<AuditSession, SessionError> {
        let cell = self.cell(session_id)?;
        let mut session = cell.lock();
        let next = session.stage.next().ok_or(SessionError::AlreadyCompleted)?;

        let missing: Vec<String> = self
            .catalog
            .for_stage(session.stage)
            .filter(|q| !session.answers.iter().any(|a| a.question_id == q.id))
            .map(|q| q.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(SessionError::UnansweredQuestions(missing));
        }
        if next == WorkflowStage::SingleModelReview {
            self.primary_ready(&session)?;
        }

        let now = self.clock.now();
        let mut updated = session.clone();
        updated.stage_completed_at.insert(session.stage, now);
        updated.stage = next;
        updated.updated_at = now;
        if next == WorkflowStage::Completed {
            updated
                .stage_completed_at
                .insert(WorkflowStage::Completed, now);
            let report = self
                .reports
                .assemble(&updated, &self.catalog, &self.store)?;
            updated.finalized_report_id = Some(report.report_id);
        }
        self.persist(&updated)?;
        *session = updated;
        info!(session = %session_id, stage = %next, "stage advanced");
        Ok(session.clone())
    }

    /// Outputs the auditor may see at the session's current stage: nothing
    /// before the single-model review, only the primary model during the
    /// single-model stages, every model afterwards.
    pub fn visible_outputs(
        &self,
        session_id: &str,
    ) -> Result<IndexMap<String, ModelOutputs>, SessionError> {
        let (stage, primary, models) = {
            let cell = self.cell(session_id)?;
            let s = cell.lock();
            (s.stage, s.primary_model_id.clone(), s.model_ids())
        };
        let visible: Vec<String> = if stage.shows_all_models() {
            models
        } else if stage.shows_primary_only() {
            vec![primary]
        } else {
            return Ok(IndexMap::new());
        };

        let status = self.orchestrator.job_status(session_id).unwrap_or_default();
        let records = self.store.query_by_session(session_id);
        Ok(visible
            .into_iter()
            .map(|model| {
                let images = records
                    .iter()
                    .filter(|r| r.model_id == model)
                    .cloned()
                    .collect();
                let job = status.get(&model);
                let outputs = ModelOutputs {
                    status: job.map(|j| j.state),
                    failure_reason: job.and_then(|j| j.failure_reason.clone()),
                    images,
                };
                (model, outputs)
            })
            .collect())
    }

    /// Whether the session's current stage reveals `model_id`'s outputs.
    pub fn model_visible(&self, session_id: &str, model_id: &str) -> Result<bool, SessionError> {
        let cell = self.cell(session_id)?;
        let s = cell.lock();
        Ok(s.job_ids.contains_key(model_id)
            && (s.stage.shows_all_models()
                || (s.stage.shows_primary_only() && s.primary_model_id == model_id)))
    }

    /// The report of a completed session, assembling it if needed.
    pub fn assemble_report(&self, session_id: &str) -> Result<AuditReport, SessionError> {
        let cell = self
            .cell(session_id)
            .map_err(|_| ReportError::SessionNotFound(session_id.to_string()))?;
        let mut session = cell.lock();
        if session.stage != WorkflowStage::Completed {
            return Err(ReportError::SessionNotCompleted(session_id.to_string()).into());
        }
        if let Some(id) = &session.finalized_report_id {
            if let Ok(report) = self.reports.get(id) {
                return Ok(report);
            }
        }
        let report = self
            .reports
            .assemble(&session, &self.catalog, &self.store)?;
        if session.finalized_report_id.is_none() {
            let mut updated = session.clone();
            updated.finalized_report_id = Some(report.report_id.clone());
            self.persist(&updated)?;
            *session = updated;
        }
        Ok(report)
    }

    /// Collects unfinished sessions idle for longer than the TTL: cancels their
    /// jobs, drops their images and forgets them. Completed sessions and
    /// their reports are kept.
    pub fn expire_idle(&self) -> Vec<String> {
        let now = self.clock.now();
        let stale: Vec<String> = self
            .sessions
            .read()
            .iter()
            .filter_map(|(id, cell)| {
                let s = cell.lock();
                (s.stage != WorkflowStage::Completed && now - s.updated_at > self.idle_ttl)
                    .then(|| id.clone())
            })
            .collect();
        for id in &stale {
            self.orchestrator.forget_session(id);
            if let Err(e) = self.store.remove_session(id) {
                tracing::warn!(session = %id, error = %e, "failed to drop images of expired session");
            }
            let _ = self.repo.delete(id);
            self.sessions.write().remove(id);
        }
        stale
    }
}
