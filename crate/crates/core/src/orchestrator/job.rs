use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::provider::PredictionHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Submitted,
    Running,
    Succeeded,
    Failed,
    Canceled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed | Self::Canceled)
    }

    /// Legal single-step transitions: the forward path
    /// Pending → Submitted → Running → terminal, the retry back-edge from
    /// Submitted/Running to Pending, failure/timeout from any live state, and
    /// cancellation from any live state.
    pub fn can_transition_to(self, next: JobState) -> bool {
        use JobState::*;
        match (self, next) {
            (Pending, Submitted) | (Submitted, Running) | (Running, Succeeded) => true,
            (Submitted | Running, Pending) => true,
            (Pending | Submitted | Running, Failed | Canceled) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobTransition {
    pub state: JobState,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub session_id: String,
    pub model_id: String,
    pub prompt: String,
    pub state: JobState,
    /// Number of retries taken so far; the current submission is attempt
    /// `attempt + 1`.
    pub attempt: u32,
    pub handle: Option<PredictionHandle>,
    /// Content ids of stored outputs, non-empty exactly when Succeeded.
    pub image_ids: Vec<String>,
    pub failure_reason: Option<String>,
    pub created_at: DateTime<Utc>,
    pub history: Vec<JobTransition>,
    #[serde(skip)]
    pub(crate) retry_after_ms: Option<u64>,
}

impl GenerationJob {
    pub(crate) fn new(
        job_id: String,
        session_id: &str,
        model_id: &str,
        prompt: &str,
        now: DateTime<Utc>,
    ) -> Self {
        Self {
            job_id,
            session_id: session_id.to_string(),
            model_id: model_id.to_string(),
            prompt: prompt.to_string(),
            state: JobState::Pending,
            attempt: 0,
            handle: None,
            image_ids: Vec::new(),
            failure_reason: None,
            created_at: now,
            history: vec![JobTransition {
                state: JobState::Pending,
                at: now,
            }],
            retry_after_ms: None,
        }
    }

    pub(crate) fn transition(&mut self, next: JobState, at: DateTime<Utc>) {
        debug_assert!(
            self.state.can_transition_to(next),
            "illegal job transition {:?} -> {:?}",
            self.state,
            next
        );
        self.state = next;
        self.history.push(JobTransition { state: next, at });
    }

    /// Time the first prediction for this job was submitted.
    pub fn submitted_at(&self) -> Option<DateTime<Utc>> {
        self.history
            .iter()
            .find(|t| t.state == JobState::Submitted)
            .map(|t| t.at)
    }

    pub fn summary(&self) -> JobSummary {
        JobSummary {
            job_id: self.job_id.clone(),
            state: self.state,
            attempt: self.attempt,
            image_count: self.image_ids.len(),
            failure_reason: self.failure_reason.clone(),
            created_at: self.created_at,
        }
    }
}

/// Read-only per-model progress view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: String,
    pub state: JobState,
    pub attempt: u32,
    pub image_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    /// When the job was queued, i.e. when the prompt was accepted.
    pub created_at: DateTime<Utc>,
}
