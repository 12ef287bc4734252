//! Batch pipeline over persisted JSONL stages.
//!
//! Every stage reads the previous stage's file and writes exactly one line
//! per input line. Per-utterance failures become `{"utterance_id", "error"}`
//! lines that later stages pass through, so line counts never change.

pub mod config;
pub mod records;
pub mod stages;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::RunConfig;
pub use stages::*;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}, line {line}: {message}", path.display())]
    BadLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] nbest_backend::BackendError),
    #[error(transparent)]
    Metrics(#[from] nbest_core::metrics::MetricsError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Outcome of one stage over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: &'static str,
    pub total: usize,
    pub failed: usize,
}

impl StageSummary {
    /// 0 when everything succeeded, 2 when some utterances failed.
    pub fn exit_code(&self) -> u8 {
        if self.failed == 0 {
            0
        } else {
            2
        }
    }
}

impl std::fmt::Display for StageSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} utterances, {} failed", self.stage, self.total, self.failed)
    }
}
