//! Background generation: one job per (session, model), each driven through
//! submit → poll → fetch+store by a pool of workers.

mod job;
mod queue;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use job::{GenerationJob, JobState, JobSummary, JobTransition};
pub use queue::JobQueue;

use crate::clock::SharedClock;
use crate::provider::{PredictionRequest, PredictionStatus, ProviderError, ProviderSet};
use crate::registry::ModelRegistry;
use crate::store::{ImageMetadata, ImageStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub workers: usize,
    pub max_retries: u32,
    pub poll_interval_ms: u64,
    pub job_timeout_s: u64,
    pub queue_depth: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_retries: 2,
            poll_interval_ms: 1000,
            job_timeout_s: 120,
            queue_depth: 4096,
        }
    }
}

impl OrchestratorConfig {
    /// Settings for the offline provider: no polling delay.
    pub fn mock() -> Self {
        Self {
            poll_interval_ms: 0,
            ..Self::default()
        }
    }

    /// Upper bound on drive steps a job needs against a zero-latency provider.
    pub fn step_budget(&self) -> u32 {
        3 + 2 * self.max_retries
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("jobs already exist for session `{0}`")]
    DuplicateSession(String),
    #[error("job `{0}` not found")]
    JobNotFound(String),
    #[error("job `{0}` is already terminal")]
    JobTerminal(String),
    #[error("job `{0}` is being driven by another worker")]
    Leased(String),
    #[error("no jobs for session `{0}`")]
    SessionNotFound(String),
    #[error("model `{0}` is not registered")]
    UnknownModel(String),
    #[error("generation queue is full")]
    QueueFull,
}

pub struct Orchestrator {
    registry: Arc<ModelRegistry>,
    providers: ProviderSet,
    store: Arc<ImageStore>,
    clock: SharedClock,
    config: OrchestratorConfig,
    jobs: RwLock<HashMap<String, Arc<Mutex<GenerationJob>>>>,
    sessions: RwLock<HashMap<String, IndexMap<String, String>>>,
    snapshots: RwLock<HashMap<String, GenerationJob>>,
    queue: JobQueue,
    stopping: AtomicBool,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("config", &self.config)
            .field("jobs", &self.jobs.read().len())
            .finish_non_exhaustive()
    }
}

impl Orchestrator {
    pub fn new(
        registry: Arc<ModelRegistry>,
        providers: ProviderSet,
        store: Arc<ImageStore>,
        clock: SharedClock,
        config: OrchestratorConfig,
    ) -> Self {
        let queue = JobQueue::new(config.queue_depth.max(1));
        Self {
            registry,
            providers,
            store,
            clock,
            config,
            jobs: RwLock::default(),
            sessions: RwLock::default(),
            snapshots: RwLock::default(),
            queue,
            stopping: AtomicBool::new(false),
            workers: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    /// Creates one Pending job per model and queues them. Never touches the
    /// network.
    pub fn enqueue_jobs(
        &self,
        session_id: &str,
        prompt: &str,
        model_ids: &[String],
    ) -> Result<Vec<GenerationJob>, OrchestratorError> {
        for m in model_ids {
            if self.registry.get(m).is_none() {
                return Err(OrchestratorError::UnknownModel(m.clone()));
            }
        }
        let mut sessions = self.sessions.write();
        if sessions.contains_key(session_id) {
            return Err(OrchestratorError::DuplicateSession(session_id.to_string()));
        }
        if !self.queue.has_room(model_ids.len()) {
            return Err(OrchestratorError::QueueFull);
        }
        let now = self.clock.now();
        let mut created = Vec::with_capacity(model_ids.len());
        let mut by_model = IndexMap::new();
        {
            let mut jobs = self.jobs.write();
            let mut snaps = self.snapshots.write();
            for model_id in model_ids {
                if by_model.contains_key(model_id) {
                    continue;
                }
                let job_id = uuid::Uuid::new_v4().to_string();
                let job = GenerationJob::new(job_id.clone(), session_id, model_id, prompt, now);
                by_model.insert(model_id.clone(), job_id.clone());
                snaps.insert(job_id.clone(), job.clone());
                jobs.insert(job_id.clone(), Arc::new(Mutex::new(job.clone())));
                created.push(job);
            }
        }
        sessions.insert(session_id.to_string(), by_model);
        drop(sessions);
        for job in &created {
            self.queue.push(job.job_id.clone(), Duration::ZERO);
        }
        Ok(created)
    }

    fn job_cell(&self, job_id: &str) -> Result<Arc<Mutex<GenerationJob>>, OrchestratorError> {
        self.jobs
            .read()
            .get(job_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::JobNotFound(job_id.to_string()))
    }

    /// Performs one lifecycle step, waiting for any worker currently holding
    /// the job.
    pub fn drive(&self, job_id: &str) -> Result<GenerationJob, OrchestratorError> {
        let cell = self.job_cell(job_id)?;
        let mut job = cell.lock();
        self.step(&mut job)
    }

    /// Like [`Orchestrator::drive`] but fails with `Leased` instead of waiting.
    pub fn try_drive(&self, job_id: &str) -> Result<GenerationJob, OrchestratorError> {
        let cell = self.job_cell(job_id)?;
        let Some(mut job) = cell.try_lock() else {
            return Err(OrchestratorError::Leased(job_id.to_string()));
        };
        self.step(&mut job)
    }

    fn publish(&self, job: &GenerationJob) {
        self.snapshots
            .write()
            .insert(job.job_id.clone(), job.clone());
    }

    fn step(&self, job: &mut GenerationJob) -> Result<GenerationJob, OrchestratorError> {
        if job.state.is_terminal() {
            return Err(OrchestratorError::JobTerminal(job.job_id.clone()));
        }
        job.retry_after_ms = None;
        let now = self.clock.now();
        let elapsed = now - job.created_at;
        if elapsed.num_milliseconds() > (self.config.job_timeout_s as i64) * 1000 {
            self.fail(job, "timeout".into());
            self.publish(job);
            return Ok(job.clone());
        }

        let Some(spec) = self.registry.get(&job.model_id).cloned() else {
            self.fail(job, format!("model `{}` is not registered", job.model_id));
            self.publish(job);
            return Ok(job.clone());
        };
        let Some(provider) = self.providers.get(&spec.provider) else {
            self.fail(job, format!("no provider `{}` configured", spec.provider));
            self.publish(job);
            return Ok(job.clone());
        };

        match job.state {
            JobState::Pending => {
                let request = PredictionRequest {
                    provider_slug: spec.provider_slug.clone(),
                    prompt: job.prompt.clone(),
                    num_images: spec.images_per_request,
                    idempotency_key: format!("{}:{}", job.job_id, job.attempt),
                };
                match provider.submit(&request) {
                    Ok(handle) => {
                        job.handle = Some(handle);
                        job.transition(JobState::Submitted, self.clock.now());
                    }
                    Err(e) => self.provider_error(job, e),
                }
            }
            JobState::Submitted | JobState::Running => {
                let handle = job.handle.clone().expect("submitted job has a handle");
                match provider.poll(&handle) {
                    Ok(fresh) => match fresh.status {
                        PredictionStatus::Queued => job.handle = Some(fresh),
                        PredictionStatus::Running => {
                            job.handle = Some(fresh);
                            if job.state == JobState::Submitted {
                                job.transition(JobState::Running, self.clock.now());
                            }
                        }
                        PredictionStatus::Succeeded if job.state == JobState::Submitted => {
                            job.handle = Some(fresh);
                            job.transition(JobState::Running, self.clock.now());
                        }
                        PredictionStatus::Succeeded => {
                            job.handle = Some(fresh.clone());
                            match provider.fetch_outputs(&fresh) {
                                Ok(buffers) => {
                                    self.store_outputs(job, &buffers, spec.images_per_request)
                                }
                                Err(e) => self.provider_error(job, e),
                            }
                        }
                        PredictionStatus::Failed | PredictionStatus::Canceled => {
                            let reason = fresh
                                .error_message
                                .clone()
                                .unwrap_or_else(|| format!("prediction {:?}", fresh.status));
                            self.attempt_failed(job, reason);
                        }
                    },
                    Err(e) => self.provider_error(job, e),
                }
            }
            _ => unreachable!("terminal states handled above"),
        }
        debug!(job = %job.job_id, state = ?job.state, attempt = job.attempt, "job step");
        self.publish(job);
        Ok(job.clone())
    }

    fn store_outputs(&self, job: &mut GenerationJob, buffers: &[Vec<u8>], expected: u32) {
        if buffers.len() != expected as usize {
            self.attempt_failed(
                job,
                format!(
                    "expected {expected} outputs, provider returned {}",
                    buffers.len()
                ),
            );
            return;
        }
        let mut ids = Vec::with_capacity(buffers.len());
        for (i, bytes) in buffers.iter().enumerate() {
            let meta = ImageMetadata {
                model_id: job.model_id.clone(),
                session_id: job.session_id.clone(),
                job_id: job.job_id.clone(),
                image_index: i as u32,
            };
            match self.store.put(bytes, meta) {
                Ok(rec) => ids.push(rec.image_id),
                Err(e) => {
                    self.attempt_failed(job, format!("storing output {i}: {e}"));
                    return;
                }
            }
        }
        job.image_ids = ids;
        job.transition(JobState::Succeeded, self.clock.now());
    }

    fn provider_error(&self, job: &mut GenerationJob, e: ProviderError) {
        if let ProviderError::RateLimited(wait) = e {
            job.retry_after_ms = Some(wait.as_millis() as u64);
            return;
        }
        self.attempt_failed(job, e.to_string());
    }

    fn attempt_failed(&self, job: &mut GenerationJob, reason: String) {
        if job.attempt < self.config.max_retries {
            warn!(job = %job.job_id, attempt = job.attempt, %reason, "generation attempt failed, retrying");
            job.attempt += 1;
            job.handle = None;
            job.failure_reason = Some(reason);
            if job.state == JobState::Pending {
                // Submission itself failed; stay pending for the next attempt.
                return;
            }
            job.transition(JobState::Pending, self.clock.now());
        } else {
            self.fail(job, reason);
        }
    }

    fn fail(&self, job: &mut GenerationJob, reason: String) {
        job.failure_reason = Some(reason);
        job.image_ids.clear();
        job.transition(JobState::Failed, self.clock.now());
    }

    pub fn job(&self, job_id: &str) -> Option<GenerationJob> {
        self.snapshots.read().get(job_id).cloned()
    }

    pub fn session_jobs(&self, session_id: &str) -> Option<IndexMap<String, String>> {
        self.sessions.read().get(session_id).cloned()
    }

    /// Per-model progress for a session, in enqueue order.
    pub fn job_status(
        &self,
        session_id: &str,
    ) -> Result<IndexMap<String, JobSummary>, OrchestratorError> {
        let by_model = self
            .session_jobs(session_id)
            .ok_or_else(|| OrchestratorError::SessionNotFound(session_id.to_string()))?;
        let snaps = self.snapshots.read();
        Ok(by_model
            .into_iter()
            .filter_map(|(model, job_id)| snaps.get(&job_id).map(|j| (model, j.summary())))
            .collect())
    }

    /// Drives every live job of a session one step each, in the calling
    /// thread. Returns how many jobs were stepped.
    pub fn step_session(&self, session_id: &str) -> usize {
        let Some(by_model) = self.session_jobs(session_id) else {
            return 0;
        };
        by_model
            .values()
            .filter(|job_id| self.drive(job_id).is_ok())
            .count()
    }

    /// Steps a session's jobs until all are terminal or `max_rounds` pass.
    pub fn run_session(&self, session_id: &str, max_rounds: usize) -> bool {
        for _ in 0..max_rounds {
            if self.step_session(session_id) == 0 {
                return true;
            }
        }
        self.step_session(session_id) == 0
    }

    /// Cancels every non-terminal job of a session.
    pub fn cancel_session(&self, session_id: &str) -> usize {
        let Some(by_model) = self.session_jobs(session_id) else {
            return 0;
        };
        let mut canceled = 0;
        for job_id in by_model.values() {
            if let Ok(cell) = self.job_cell(job_id) {
                let mut job = cell.lock();
                if !job.state.is_terminal() {
                    job.handle = None;
                    job.transition(JobState::Canceled, self.clock.now());
                    self.publish(&job);
                    canceled += 1;
                }
            }
        }
        canceled
    }

    /// Cancels and drops all jobs of a session.
    pub fn forget_session(&self, session_id: &str) {
        self.cancel_session(session_id);
        if let Some(by_model) = self.sessions.write().remove(session_id) {
            let mut jobs = self.jobs.write();
            let mut snaps = self.snapshots.write();
            for job_id in by_model.values() {
                jobs.remove(job_id);
                snaps.remove(job_id);
            }
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Spawns `config.workers` threads consuming the job queue.
    pub fn start_workers(self: &Arc<Self>) {
        let mut workers = self.workers.lock();
        for n in 0..self.config.workers.max(1) {
            let this = Arc::clone(self);
            let handle = std::thread::Builder::new()
                .name(format!("gen-worker-{n}"))
                .spawn(move || this.worker_loop())
                .expect("spawn generation worker");
            workers.push(handle);
        }
    }

    fn worker_loop(&self) {
        let poll = Duration::from_millis(self.config.poll_interval_ms);
        while let Some(job_id) = self.queue.pop() {
            if self.stopping.load(Ordering::SeqCst) {
                break;
            }
            match self.try_drive(&job_id) {
                Ok(job) if !job.state.is_terminal() => {
                    let delay = match (job.state, job.retry_after_ms) {
                        (_, Some(ms)) => Duration::from_millis(ms).max(poll),
                        (JobState::Pending, None) => Duration::ZERO,
                        _ => poll,
                    };
                    self.queue.push(job_id, delay);
                }
                Ok(_) => {}
                Err(OrchestratorError::Leased(_)) => {
                    self.queue.push(job_id, poll.max(Duration::from_millis(5)));
                }
                Err(_) => {}
            }
        }
    }

    /// Stops workers after their current step and joins them.
    pub fn shutdown(&self) {
        self.stopping.store(true, Ordering::SeqCst);
        self.queue.close();
        let handles: Vec<_> = self.workers.lock().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }

    /// Drains due queue items in the calling thread. Test and CLI helper for
    /// deployments without workers.
    pub fn run_queue_inline(&self, max_steps: usize) -> usize {
        let mut steps = 0;
        while steps < max_steps {
            let Some(job_id) = self.queue.pop_now() else {
                break;
            };
            if let Ok(job) = self.drive(&job_id) {
                steps += 1;
                if !job.state.is_terminal() {
                    self.queue.push(job_id, Duration::ZERO);
                }
            }
        }
        steps
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        self.queue.close();
    }
}
