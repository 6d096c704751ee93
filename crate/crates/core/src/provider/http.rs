use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::{PredictionHandle, PredictionRequest, PredictionStatus, Provider, ProviderError};
use crate::retry::RetryPolicy;

/// Environment variable holding the provider bearer token.
pub const TOKEN_ENV_VAR: &str = "T2I_AUDIT_PROVIDER_TOKEN";

const DEFAULT_RETRY_AFTER: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    /// Base URL of the prediction API, e.g. `https://api.replicate.com/v1`.
    pub base_url: String,
    pub token: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl HttpProviderConfig {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn from_env(base_url: impl Into<String>) -> Result<Self, ProviderError> {
        let token = std::env::var(TOKEN_ENV_VAR).map_err(|_| ProviderError::AuthFailed)?;
        Ok(Self::new(base_url, token))
    }
}

#[derive(Debug, Deserialize)]
struct WirePrediction {
    id: String,
    status: String,
    #[serde(default)]
    output: Option<serde_json::Value>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
struct CreatePrediction<'a> {
    model: &'a str,
    input: serde_json::Value,
}

/// Client for a Replicate-style prediction API:
/// `POST {base}/predictions` creates, `GET {base}/predictions/{id}` polls.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: Agent,
    blocked_until_ms: AtomicU64,
    submitted: Mutex<HashMap<String, PredictionHandle>>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.config.base_url)
            .finish_non_exhaustive()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn parse_status(raw: &str) -> Result<PredictionStatus, ProviderError> {
    Ok(match raw {
        "starting" | "queued" => PredictionStatus::Queued,
        "processing" | "running" => PredictionStatus::Running,
        "succeeded" => PredictionStatus::Succeeded,
        "failed" => PredictionStatus::Failed,
        "canceled" | "cancelled" => PredictionStatus::Canceled,
        other => return Err(ProviderError::Protocol(format!("unknown status `{other}`"))),
    })
}

fn into_handle(wire: WirePrediction) -> Result<PredictionHandle, ProviderError> {
    let status = parse_status(&wire.status)?;
    let mut output_urls = match wire.output {
        Some(serde_json::Value::Array(items)) => items
            .into_iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        Some(serde_json::Value::String(url)) => vec![url],
        _ => Vec::new(),
    };
    if status != PredictionStatus::Succeeded {
        output_urls.clear();
    } else if output_urls.is_empty() {
        return Err(ProviderError::Protocol(
            "succeeded prediction without outputs".into(),
        ));
    }
    let error_message = wire.error.and_then(|e| match e {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s),
        other => Some(other.to_string()),
    });
    Ok(PredictionHandle {
        provider_prediction_id: wire.id,
        status,
        output_urls,
        error_message,
    })
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            config,
            agent,
            blocked_until_ms: AtomicU64::new(0),
            submitted: Mutex::new(HashMap::new()),
        }
    }

    fn check_rate_limit(&self) -> Result<(), ProviderError> {
        let until = self.blocked_until_ms.load(Ordering::Acquire);
        let now = now_ms();
        if now < until {
            return Err(ProviderError::RateLimited(Duration::from_millis(
                until - now,
            )));
        }
        Ok(())
    }

    fn note_rate_limit(&self, retry_after: Duration) {
        let until = now_ms() + retry_after.as_millis() as u64;
        self.blocked_until_ms.fetch_max(until, Ordering::AcqRel);
    }

    fn retry_after(resp: &ureq::http::Response<ureq::Body>) -> Duration {
        resp.headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64)
            .unwrap_or(DEFAULT_RETRY_AFTER)
    }

    /// Shared status handling for create and get calls.
    fn read_prediction(
        &self,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
        on_not_found: impl Fn() -> ProviderError,
    ) -> Result<PredictionHandle, ProviderError> {
        let mut resp = result.map_err(|e| ProviderError::ProviderUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let wire: WirePrediction = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| ProviderError::Protocol(e.to_string()))?;
                into_handle(wire)
            }
            401 | 403 => Err(ProviderError::AuthFailed),
            404 | 422 => Err(on_not_found()),
            429 => {
                let wait = Self::retry_after(&resp);
                self.note_rate_limit(wait);
                Err(ProviderError::RateLimited(wait))
            }
            500..=599 => Err(ProviderError::ProviderUnreachable(format!("HTTP {status}"))),
            _ => Err(ProviderError::Protocol(format!("HTTP {status}"))),
        }
    }

    fn transient_hint(e: &ProviderError) -> Option<Duration> {
        match e {
            ProviderError::ProviderUnreachable(_) | ProviderError::DownloadFailed(_) => {
                Some(Duration::ZERO)
            }
            _ => None,
        }
    }
}

impl Provider for HttpProvider {
    fn submit(&self, request: &PredictionRequest) -> Result<PredictionHandle, ProviderError> {
        if let Some(handle) = self.submitted.lock().get(&request.idempotency_key) {
            return Ok(handle.clone());
        }
        self.check_rate_limit()?;
        let url = format!("{}/predictions", self.config.base_url);
        let body = CreatePrediction {
            model: &request.provider_slug,
            input: json!({
                "prompt": request.prompt,
                "num_outputs": request.num_images,
            }),
        };
        let handle = self.config.retry.run(
            |_| {
                let result = self
                    .agent
                    .post(&url)
                    .header("Authorization", &format!("Bearer {}", self.config.token))
                    .header("Idempotency-Key", &request.idempotency_key)
                    .send_json(&body);
                self.read_prediction(result, || {
                    ProviderError::UnknownSlug(request.provider_slug.clone())
                })
            },
            Self::transient_hint,
        )?;
        let mut submitted = self.submitted.lock();
        let stored = submitted
            .entry(request.idempotency_key.clone())
            .or_insert(handle);
        Ok(stored.clone())
    }

    fn poll(&self, handle: &PredictionHandle) -> Result<PredictionHandle, ProviderError> {
        if handle.status.is_terminal() {
            return Ok(handle.clone());
        }
        self.check_rate_limit()?;
        let id = &handle.provider_prediction_id;
        let url = format!("{}/predictions/{}", self.config.base_url, id);
        let fresh = self.config.retry.run(
            |_| {
                let result = self
                    .agent
                    .get(&url)
                    .header("Authorization", &format!("Bearer {}", self.config.token))
                    .call();
                self.read_prediction(result, || ProviderError::UnknownPrediction(id.clone()))
            },
            Self::transient_hint,
        )?;
        // A lagging replica must not move a prediction backwards.
        if fresh.status.rank() < handle.status.rank() {
            return Ok(handle.clone());
        }
        Ok(fresh)
    }

    fn fetch_outputs(&self, handle: &PredictionHandle) -> Result<Vec<Vec<u8>>, ProviderError> {
        if handle.status != PredictionStatus::Succeeded {
            return Err(ProviderError::NotSucceeded);
        }
        handle
            .output_urls
            .iter()
            .map(|url| {
                self.config.retry.run(
                    |_| {
                        let mut resp = self
                            .agent
                            .get(url)
                            .call()
                            .map_err(|_| ProviderError::DownloadFailed(url.clone()))?;
                        if !resp.status().is_success() {
                            return Err(ProviderError::DownloadFailed(url.clone()));
                        }
                        resp.body_mut()
                            .with_config()
                            .limit(64 * 1024 * 1024)
                            .read_to_vec()
                            .map_err(|_| ProviderError::DownloadFailed(url.clone()))
                    },
                    Self::transient_hint,
                )
            })
            .collect()
    }
}
