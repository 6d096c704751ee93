//! Immutable audit reports assembled from completed sessions.

mod forum;
mod markdown;

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use forum::{ForumClient, ForumConfig, ForumPost};
pub use markdown::render_markdown;

use crate::session::{AuditSession, QuestionCatalog, WorkflowStage};
use crate::store::ImageStore;

pub const SCHEMA_VERSION: u32 = 1;

/// Route under which the service serves stored images.
pub const DEFAULT_IMAGE_BASE: &str = "/images";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("session `{0}` has not completed the workflow")]
    SessionNotCompleted(String),
    #[error("report `{0}` not found")]
    ReportNotFound(String),
    #[error("unsupported export format `{0}`")]
    UnsupportedFormat(String),
    #[error("forum is not configured")]
    NotConfigured,
    #[error("forum unreachable: {0}")]
    ForumUnreachable(String),
    #[error("forum rejected the post with HTTP {0}")]
    ForumRejected(u16),
    #[error("report persistence failed: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaEntry {
    pub stage: WorkflowStage,
    pub question: String,
    pub answer: String,
}

/// Field order here is the JSON export order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub report_id: String,
    pub session_id: String,
    pub prompt: String,
    #[serde(rename = "models")]
    pub model_ids: Vec<String>,
    pub qa: Vec<QaEntry>,
    #[serde(rename = "images")]
    pub image_refs: IndexMap<String, Vec<String>>,
    pub created_at: DateTime<Utc>,
}

impl AuditReport {
    pub fn image_count(&self) -> usize {
        self.image_refs.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Markdown,
}

impl FromStr for ExportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl ExportFormat {
    pub fn media_type(self) -> &'static str {
        match self {
            Self::Json => "application/json",
            Self::Markdown => "text/markdown; charset=utf-8",
        }
    }
}

/// Report ids are derived from the session id so rebuilding a report from the
/// same session state yields identical bytes.
pub fn report_id_for(session_id: &str) -> String {
    let digest = Sha256::digest(format!("audit-report:{session_id}").as_bytes());
    format!("rpt_{}", &hex::encode(digest)[..24])
}

/// Builds the report for a completed session without persisting it.
pub fn build_report(
    session: &AuditSession,
    catalog: &QuestionCatalog,
    store: &ImageStore,
) -> Result<AuditReport, ReportError> {
    if session.stage != WorkflowStage::Completed {
        return Err(ReportError::SessionNotCompleted(session.session_id.clone()));
    }
    let mut answers: Vec<_> = session.answers.iter().collect();
    answers.sort_by_key(|a| {
        (
            a.stage,
            catalog.position(&a.question_id).unwrap_or(usize::MAX),
        )
    });
    let qa = answers
        .into_iter()
        .map(|a| QaEntry {
            stage: a.stage,
            question: catalog
                .get(&a.question_id)
                .map(|q| q.text.clone())
                .unwrap_or_else(|| a.question_id.clone()),
            answer: a.text.clone(),
        })
        .collect();

    let created_at = session
        .stage_completed_at
        .get(&WorkflowStage::CrossModelReflection)
        .copied()
        .unwrap_or(session.updated_at);

    // Images that land after completion are not part of what the auditor
    // reviewed, and would make reassembly differ.
    let mut image_refs: IndexMap<String, Vec<String>> = IndexMap::new();
    for rec in store
        .query_by_session(&session.session_id)
        .into_iter()
        .filter(|r| r.created_at <= created_at)
    {
        image_refs
            .entry(rec.model_id)
            .or_default()
            .push(rec.image_id);
    }
    // Keep the session's model order even if the store orders differently.
    image_refs
        .sort_by_cached_key(|model, _| session.job_ids.get_index_of(model).unwrap_or(usize::MAX));

    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        report_id: report_id_for(&session.session_id),
        session_id: session.session_id.clone(),
        prompt: session.prompt.clone(),
        model_ids: session.job_ids.keys().cloned().collect(),
        qa,
        image_refs,
        created_at,
    })
}

/// Persistent set of reports and their forum publications.
#[derive(Debug)]
pub struct ReportBook {
    reports: RwLock<HashMap<String, AuditReport>>,
    posts: RwLock<HashMap<String, ForumPost>>,
    dir: Option<PathBuf>,
    image_base: String,
}

impl ReportBook {
    pub fn in_memory() -> Self {
        Self {
            reports: RwLock::default(),
            posts: RwLock::default(),
            dir: None,
            image_base: DEFAULT_IMAGE_BASE.to_string(),
        }
    }

    /// Stores reports as `<dir>/<report_id>.json` and loads existing ones.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        let persist = |e: std::io::Error| ReportError::Persist(e.to_string());
        fs::create_dir_all(&dir).map_err(persist)?;
        let mut reports = HashMap::new();
        let mut posts = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(persist)? {
            let path = entry.map_err(persist)?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let bytes = fs::read(&path).map_err(persist)?;
            if let Some(id) = name.strip_suffix(".post.json") {
                let post: ForumPost = serde_json::from_slice(&bytes)
                    .map_err(|e| ReportError::Persist(e.to_string()))?;
                posts.insert(id.to_string(), post);
            } else if name.ends_with(".json") {
                let report: AuditReport = serde_json::from_slice(&bytes)
                    .map_err(|e| ReportError::Persist(e.to_string()))?;
                reports.insert(report.report_id.clone(), report);
            }
        }
        Ok(Self {
            reports: RwLock::new(reports),
            posts: RwLock::new(posts),
            dir: Some(dir),
            image_base: DEFAULT_IMAGE_BASE.to_string(),
        })
    }

    /// Base URL or path prepended to image ids in Markdown exports.
    pub fn with_image_base(mut self, base: impl Into<String>) -> Self {
        self.image_base = base.into().trim_end_matches('/').to_string();
        self
    }

    fn write_file(&self, name: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(name);
        let tmp = dir.join(format!("{name}.tmp"));
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| ReportError::Persist(e.to_string()))
    }

    /// Assembles and stores the report for a completed session. If a report
    /// already exists for the session it is returned unchanged.
    pub fn assemble(
        &self,
        session: &AuditSession,
        catalog: &QuestionCatalog,
        store: &ImageStore,
    ) -> Result<AuditReport, ReportError> {
        let id = report_id_for(&session.session_id);
        if let Some(existing) = self.reports.read().get(&id) {
            return Ok(existing.clone());
        }
        let report = build_report(session, catalog, store)?;
        let mut reports = self.reports.write();
        if let Some(existing) = reports.get(&id) {
            return Ok(existing.clone());
        }
        self.write_file(&format!("{id}.json"), &report.to_json())?;
        reports.insert(id, report.clone());
        Ok(report)
    }

    pub fn get(&self, report_id: &str) -> Result<AuditReport, ReportError> {
        self.reports
            .read()
            .get(report_id)
            .cloned()
            .ok_or_else(|| ReportError::ReportNotFound(report_id.to_string()))
    }

    pub fn export(&self, report_id: &str, format: ExportFormat) -> Result<Vec<u8>, ReportError> {
        let report = self.get(report_id)?;
        Ok(match format {
            ExportFormat::Json => report.to_json(),
            ExportFormat::Markdown => render_markdown(&report, &self.image_base).into_bytes(),
        })
    }

    /// Same as [`ReportBook::export`] with the format given by name.
    pub fn export_named(&self, report_id: &str, format: &str) -> Result<Vec<u8>, ReportError> {
        self.get(report_id)?;
        self.export(report_id, format.parse()?)
    }

    pub fn post(&self, report_id: &str) -> Option<ForumPost> {
        self.posts.read().get(report_id).cloned()
    }

    /// Creates a forum topic for the report. Publishing an already published
    /// report returns the recorded post without contacting the forum.
    pub fn publish(
        &self,
        report_id: &str,
        forum: Option<&ForumClient>,
    ) -> Result<ForumPost, ReportError> {
        let report = self.get(report_id)?;
        if let Some(post) = self.post(report_id) {
            return Ok(post);
        }
        let forum = forum.ok_or(ReportError::NotConfigured)?;
        let base = forum
            .config()
            .image_base_url
            .clone()
            .unwrap_or_else(|| self.image_base.clone());
        let mut post = ForumPost {
            title: forum::title_for(&report),
            body: render_markdown(&report, &base),
            topic_id: None,
        };
        post.topic_id = Some(forum.create_topic(&post.title, &post.body)?);
        let bytes = serde_json::to_vec_pretty(&post).expect("post serializes");
        self.write_file(&format!("{report_id}.post.json"), &bytes)?;
        self.posts
            .write()
            .insert(report_id.to_string(), post.clone());
        Ok(post)
    }
}
