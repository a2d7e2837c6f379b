//! Access to the chat-completion model: prompt templates, transport backends,
//! bounded parallelism, retries and the on-disk response cache.

pub mod cache;
pub mod http;
pub mod mock;
pub mod prompt;
pub mod synth;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{OracleBackend, OraclePlan, ScriptedBackend};
pub use prompt::RankingMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {code}: {body}")]
    Status {
        code: u16,
        retry_after: Option<Duration>,
        body: String,
    },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::InvalidResponse(_) => false,
        }
    }

    fn retry_after(&self) -> Option<Duration> {
        match self {
            BackendError::Status { code: 429, retry_after, .. } => *retry_after,
            _ => None,
        }
    }
}

/// A chat-completion transport. Implementations return the text of the
/// first choice.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend-unavailable for instance {instance_id} after {attempts} attempts: {last_error}")]
    BackendUnavailable {
        instance_id: String,
        attempts: u32,
        last_error: BackendError,
    },
    #[error("rate-limited for instance {instance_id} (retry after {retry_after:?})")]
    RateLimited {
        instance_id: String,
        retry_after: Option<Duration>,
    },
    #[error("request rejected for instance {instance_id}: {error}")]
    Rejected { instance_id: String, error: BackendError },
}

impl GatewayError {
    pub fn instance_id(&self) -> &str {
        match self {
            GatewayError::BackendUnavailable { instance_id, .. }
            | GatewayError::RateLimited { instance_id, .. }
            | GatewayError::Rejected { instance_id, .. } => instance_id,
        }
    }
}

/// `max_retries` additional attempts after the first; the i-th retry waits
/// `backoff[min(i, len - 1)]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(2),
                Duration::from_secs(8),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            backoff: vec![Duration::ZERO],
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        match self.backoff.len() {
            0 => Duration::ZERO,
            n => self.backoff[(retry as usize).min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_parallel_requests: usize,
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            model_name: "Qwen/Qwen3-32B".into(),
            temperature: 0.0,
            max_output_tokens: 256,
            max_parallel_requests: 8,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

/// Shared handle used by all workers. Cheap to clone; clones share the
/// request budget, cache and counters.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    limiter: Arc<Semaphore>,
    config: Arc<BackendConfig>,
    cache: Option<ResponseCache>,
    counters: Arc<Counters>,
}

impl Gateway {
    /// Fails when the config violates `temperature >= 0` or
    /// `max_parallel_requests >= 1`.
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Result<Self, String> {
        if !(config.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", config.temperature));
        }
        if config.max_parallel_requests == 0 {
            return Err("max_parallel_requests must be >= 1".into());
        }
        Ok(Self {
            backend,
            limiter: Arc::new(Semaphore::new(config.max_parallel_requests)),
            config: Arc::new(config),
            cache: None,
            counters: Arc::default(),
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Requests that reached the backend (retries included).
    pub fn requests_sent(&self) -> usize {
        self.counters.requests.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.counters.cache_hits.load(Ordering::Relaxed)
    }

    /// Sends `prompt`, retrying transient failures. `instance_id` is carried
    /// into errors and logs.
    pub async fn complete(&self, prompt: &str, instance_id: &str) -> Result<String, GatewayError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&self.config.model_name, prompt) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }

        let request = ChatRequest {
            model: self.config.model_name.clone(),
            prompt: prompt.to_string(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
        };
        let retry = &self.config.retry;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire().await.expect("semaphore never closed");
                self.counters.requests.fetch_add(1, Ordering::Relaxed);
                self.backend.chat(&request).await
            };
            let error = match result {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(&self.config.model_name, prompt, &text) {
                            tracing::warn!(error = %e, "failed to write response cache");
                        }
                    }
                    return Ok(text);
                }
                Err(e) => e,
            };
            let at = SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or_default();
            tracing::warn!(instance_id, attempt, at_ms = at as u64, error = %error, "backend request failed");

            if !error.is_retryable() {
                return Err(GatewayError::Rejected {
                    instance_id: instance_id.to_string(),
                    error,
                });
            }
            if attempt > retry.max_retries {
                if let BackendError::Status { code: 429, retry_after, .. } = error {
                    return Err(GatewayError::RateLimited {
                        instance_id: instance_id.to_string(),
                        retry_after,
                    });
                }
                return Err(GatewayError::BackendUnavailable {
                    instance_id: instance_id.to_string(),
                    attempts: attempt,
                    last_error: error,
                });
            }
            let wait = retry.delay(attempt - 1).max(error.retry_after().unwrap_or_default());
            if !wait.is_zero() {
                tokio::time::sleep(wait).await;
            }
        }
    }
}
