use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::{AuditReport, ReportError};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumPost {
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub topic_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumConfig {
    pub base_url: String,
    pub api_key: String,
    #[serde(default = "default_username")]
    pub api_username: String,
    #[serde(default)]
    pub category: Option<u64>,
    /// Absolute base for image links in posts, e.g. `https://audit.example/images`.
    #[serde(default)]
    pub image_base_url: Option<String>,
}

fn default_username() -> String {
    "system".to_string()
}

pub(super) fn title_for(report: &AuditReport) -> String {
    let mut prompt: String = report.prompt.chars().take(200).collect();
    if prompt.len() < report.prompt.len() {
        prompt.push('…');
    }
    format!("Audit: {prompt}")
}

#[derive(Debug, Deserialize)]
struct CreatedTopic {
    topic_id: u64,
}

/// Client for a Discourse-style forum: `POST {base}/posts.json` with
/// `Api-Key` / `Api-Username` headers creates a topic.
#[derive(Debug, Clone)]
pub struct ForumClient {
    config: ForumConfig,
    retry: RetryPolicy,
    agent: Agent,
}

enum Attempt {
    Unreachable(String),
    Status(u16, Duration),
    Fatal(ReportError),
}

impl ForumClient {
    pub fn new(config: ForumConfig) -> Self {
        Self::with_retry(config, RetryPolicy::default())
    }

    pub fn with_retry(config: ForumConfig, retry: RetryPolicy) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self {
            config,
            retry,
            agent,
        }
    }

    pub fn config(&self) -> &ForumConfig {
        &self.config
    }

    pub fn create_topic(&self, title: &str, body: &str) -> Result<u64, ReportError> {
        let url = format!("{}/posts.json", self.config.base_url.trim_end_matches('/'));
        let mut payload = json!({ "title": title, "raw": body });
        if let Some(cat) = self.config.category {
            payload["category"] = json!(cat);
        }
        let result = self.retry.run(
            |_| {
                let mut resp = self
                    .agent
                    .post(&url)
                    .header("Api-Key", &self.config.api_key)
                    .header("Api-Username", &self.config.api_username)
                    .send_json(&payload)
                    .map_err(|e| Attempt::Unreachable(e.to_string()))?;
                let status = resp.status().as_u16();
                match status {
                    200..=299 => resp
                        .body_mut()
                        .read_json::<CreatedTopic>()
                        .map(|t| t.topic_id)
                        .map_err(|e| Attempt::Fatal(ReportError::ForumUnreachable(e.to_string()))),
                    429 | 500..=599 => {
                        let wait = resp
                            .headers()
                            .get("retry-after")
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<f64>().ok())
                            .map(Duration::from_secs_f64)
                            .unwrap_or(Duration::ZERO);
                        Err(Attempt::Status(status, wait))
                    }
                    other => Err(Attempt::Fatal(ReportError::ForumRejected(other))),
                }
            },
            |e| match e {
                Attempt::Unreachable(_) => Some(Duration::ZERO),
                Attempt::Status(_, wait) => Some(*wait),
                Attempt::Fatal(_) => None,
            },
        );
        result.map_err(|e| match e {
            Attempt::Unreachable(msg) => ReportError::ForumUnreachable(msg),
            Attempt::Status(code, _) => ReportError::ForumRejected(code),
            Attempt::Fatal(err) => err,
        })
    }
}
