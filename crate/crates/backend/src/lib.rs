//! Uniform text completion over interchangeable backends.
//!
//! Every backend takes a [`CompletionRequest`] holding the fully rendered
//! prompt and returns the completion verbatim. [`complete_batch`] runs a
//! batch with bounded concurrency and returns results in request order.

pub mod fixture;
pub mod http;
pub mod oracle;

use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{prompt_digest, FixtureBackend, FixtureRecord};
pub use http::{HttpBackend, HttpConfig};
pub use oracle::{oracle_posterior, Oracle, OracleBackend, OracleConfig};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 16;
pub const DEFAULT_MAX_INFLIGHT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Fixture,
    Oracle,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Fixture => "fixture",
            BackendKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "http" => Ok(BackendKind::Http),
            "fixture" => Ok(BackendKind::Fixture),
            "oracle" => Ok(BackendKind::Oracle),
            other => Err(format!("unknown backend {other:?} (expected http, fixture or oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub utterance_id: String,
    pub prompt: String,
    pub max_new_tokens: u32,
    /// Greedy decoding unless a caller deliberately overrides it.
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(utterance_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            prompt: prompt.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub utterance_id: String,
    /// Untrimmed; may be empty.
    pub raw_text: String,
    pub backend: BackendKind,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{utterance_id}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        utterance_id: String,
        attempts: u32,
        message: String,
    },
    #[error("{utterance_id}: service replied with status {status}: {body}")]
    Service {
        utterance_id: String,
        status: u16,
        body: String,
    },
    #[error("{utterance_id}: malformed service reply: {message}")]
    MalformedReply { utterance_id: String, message: String },
    #[error("no fixture entry for utterance {0:?}")]
    FixtureMiss(String),
    #[error("fixture entry for {utterance_id:?} was recorded for a different prompt")]
    DigestMismatch { utterance_id: String },
    #[error("{utterance_id}: cannot read an n-best list from the prompt: {reason}")]
    OraclePrompt { utterance_id: String, reason: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn utterance_id(&self) -> Option<&str> {
        match self {
            BackendError::Transport { utterance_id, .. }
            | BackendError::Service { utterance_id, .. }
            | BackendError::MalformedReply { utterance_id, .. }
            | BackendError::DigestMismatch { utterance_id }
            | BackendError::OraclePrompt { utterance_id, .. } => Some(utterance_id),
            BackendError::FixtureMiss(id) => Some(id),
            BackendError::Config(_) => None,
        }
    }

    /// Requests actually sent, where that is meaningful.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            BackendError::Transport { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// Runs every request with at most `max_inflight` outstanding and returns
/// results in request order, whatever order they complete in.
pub async fn complete_batch(
    backend: &dyn Backend,
    requests: &[CompletionRequest],
    max_inflight: usize,
) -> Vec<Result<CompletionResponse, BackendError>> {
    stream::iter(requests)
        .map(|r| backend.complete(r))
        .buffered(max_inflight.max(1))
        .collect()
        .await
}
