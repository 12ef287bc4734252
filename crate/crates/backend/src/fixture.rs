//! Replay of stored completions keyed by utterance id.

use std::collections::HashMap;
use std::io::BufRead;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Backend, BackendError, BackendKind, CompletionRequest, CompletionResponse};

/// Line format of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub utterance_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
}

/// Lowercase hex SHA-256 of the prompt bytes.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct FixtureBackend {
    records: HashMap<String, FixtureRecord>,
    /// Also require the stored digest to match the request prompt.
    strict: bool,
}

impl FixtureBackend {
    pub fn new(records: impl IntoIterator<Item = FixtureRecord>, strict: bool) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        for r in records {
            if let Some(dup) = map.insert(r.utterance_id.clone(), r) {
                return Err(BackendError::Config(format!(
                    "duplicate fixture entry for {:?}",
                    dup.utterance_id
                )));
            }
        }
        Ok(Self { records: map, strict })
    }

    pub fn from_jsonl(reader: impl BufRead, strict: bool) -> Result<Self, BackendError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(format!("reading fixtures: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("fixture line {}: {e}", i + 1)))?;
            records.push(record);
        }
        Self::new(records, strict)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[async_trait]
impl Backend for FixtureBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Fixture
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let started = Instant::now();
        let record = self
            .records
            .get(&request.utterance_id)
            .ok_or_else(|| BackendError::FixtureMiss(request.utterance_id.clone()))?;
        if self.strict && record.prompt_digest.as_deref() != Some(prompt_digest(&request.prompt).as_str()) {
            return Err(BackendError::DigestMismatch {
                utterance_id: request.utterance_id.clone(),
            });
        }
        Ok(CompletionResponse {
            utterance_id: request.utterance_id.clone(),
            raw_text: record.raw_text.clone(),
            backend: BackendKind::Fixture,
            latency: started.elapsed(),
        })
    }
}
