//! Text-to-image inference providers.
//!
//! A provider follows a submit/poll/fetch protocol: `submit` creates a
//! prediction and returns a handle, `poll` refreshes the handle's status,
//! and `fetch_outputs` downloads the finished images.

mod http;
mod mock;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpProvider, HttpProviderConfig, TOKEN_ENV_VAR};
pub use mock::{render_placeholder, FailureMode, MockProvider, MOCK_PROVIDER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub provider_slug: String,
    pub prompt: String,
    pub num_images: u32,
    pub idempotency_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Canceled,
}

impl PredictionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed | Self::Canceled)
    }

    /// Position along queued → running → terminal.
    pub fn rank(self) -> u8 {
        match self {
            Self::Queued => 0,
            Self::Running => 1,
            Self::Succeeded | Self::Failed | Self::Canceled => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionHandle {
    pub provider_prediction_id: String,
    pub status: PredictionStatus,
    /// Non-empty exactly when `status` is `Succeeded`.
    #[serde(default)]
    pub output_urls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider rejected credentials")]
    AuthFailed,
    #[error("unknown model slug `{0}`")]
    UnknownSlug(String),
    #[error("rate limited, retry after {0:?}")]
    RateLimited(Duration),
    #[error("unknown prediction `{0}`")]
    UnknownPrediction(String),
    #[error("prediction has not succeeded")]
    NotSucceeded,
    #[error("failed to download `{0}`")]
    DownloadFailed(String),
    #[error("unexpected provider response: {0}")]
    Protocol(String),
}

impl ProviderError {
    /// Whether the same call may succeed if repeated later.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Self::ProviderUnreachable(_) | Self::RateLimited(_) | Self::DownloadFailed(_)
        )
    }
}

pub trait Provider: Send + Sync {
    fn submit(&self, request: &PredictionRequest) -> Result<PredictionHandle, ProviderError>;

    fn poll(&self, handle: &PredictionHandle) -> Result<PredictionHandle, ProviderError>;

    fn fetch_outputs(&self, handle: &PredictionHandle) -> Result<Vec<Vec<u8>>, ProviderError>;
}

/// Provider instances keyed by the `provider` field of a model spec.
#[derive(Clone, Default)]
pub struct ProviderSet {
    providers: HashMap<String, Arc<dyn Provider>>,
    fallback: Option<Arc<dyn Provider>>,
}

impl ProviderSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every lookup resolves to `provider`, regardless of the model's
    /// configured provider id. Used for offline (mock) deployments.
    pub fn single(provider: Arc<dyn Provider>) -> Self {
        Self {
            providers: HashMap::new(),
            fallback: Some(provider),
        }
    }

    pub fn with(mut self, id: &str, provider: Arc<dyn Provider>) -> Self {
        self.providers.insert(id.to_string(), provider);
        self
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn Provider>> {
        self.providers
            .get(id)
            .cloned()
            .or_else(|| self.fallback.clone())
    }
}

impl std::fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSet")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}
