//! Completion over a minimal JSON HTTP protocol.
//!
//! Request body: `{"model", "prompt", "temperature", "max_tokens"}`.
//! Reply body: `{"text"}`. Transport failures are retried with exponential
//! backoff; any reply from the service, successful or not, is final.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::{Backend, BackendError, BackendKind, CompletionRequest, CompletionResponse, DEFAULT_MAX_INFLIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Header carrying the secret; omitted when no secret is configured.
    pub auth_header: String,
    /// Environment variable holding the secret. Overrides `auth_value`.
    pub auth_env: String,
    pub auth_value: Option<String>,
    pub timeout_ms: u64,
    pub max_inflight: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            path: "/v1/completions".into(),
            model: "default".into(),
            auth_header: "Authorization".into(),
            auth_env: "NBEST_API_KEY".into(),
            auth_value: None,
            timeout_ms: 60_000,
            max_inflight: DEFAULT_MAX_INFLIGHT,
            max_attempts: 3,
            initial_backoff_ms: 250,
        }
    }
}

impl HttpConfig {
    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.path)
    }

    fn secret(&self) -> Option<String> {
        std::env::var(&self.auth_env)
            .ok()
            .filter(|v| !v.is_empty())
            .or_else(|| self.auth_value.clone())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireReply {
    text: String,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpConfig,
    url: String,
    secret: Option<String>,
    permits: Arc<Semaphore>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.max_inflight == 0 || config.max_attempts == 0 {
            return Err(BackendError::Config(
                "max_inflight and max_attempts must be positive".into(),
            ));
        }
        let url = config.url();
        reqwest::Url::parse(&url).map_err(|e| BackendError::Config(format!("endpoint {url:?}: {e}")))?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url,
            secret: config.secret(),
            permits: Arc::new(Semaphore::new(config.max_inflight)),
            config,
        })
    }

    async fn send_once(&self, request: &CompletionRequest) -> Result<reqwest::Response, reqwest::Error> {
        let body = WireRequest {
            model: &self.config.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_new_tokens,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(secret) = &self.secret {
            builder = builder.header(self.config.auth_header.as_str(), secret.as_str());
        }
        builder.send().await
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        let started = Instant::now();
        let id = &request.utterance_id;
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.send_once(request).await {
                Ok(r) => break r,
                Err(e) if attempt >= self.config.max_attempts => {
                    return Err(BackendError::Transport {
                        utterance_id: id.clone(),
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
                Err(_) => {
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
            }
        };
        let status = response.status();
        let body = response.text().await.map_err(|e| BackendError::Transport {
            utterance_id: id.clone(),
            attempts: attempt,
            message: format!("reading reply body: {e}"),
        })?;
        if !status.is_success() {
            return Err(BackendError::Service {
                utterance_id: id.clone(),
                status: status.as_u16(),
                body,
            });
        }
        let reply: WireReply = serde_json::from_str(&body).map_err(|e| BackendError::MalformedReply {
            utterance_id: id.clone(),
            message: e.to_string(),
        })?;
        Ok(CompletionResponse {
            utterance_id: id.clone(),
            raw_text: reply.text,
            backend: BackendKind::Http,
            latency: started.elapsed(),
        })
    }
}
