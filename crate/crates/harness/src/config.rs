//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use nbest_backend::{BackendKind, HttpConfig, OracleConfig, DEFAULT_MAX_INFLIGHT};
use nbest_core::prompt::{Ablation, AblationSet, InputMode, OutputMode, Task, DEFAULT_BUDGET_TOKENS};
use nbest_core::synth::ChannelConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterKind {
    /// Roughly 1.3 tokens per whitespace word.
    #[default]
    Approx,
    Whitespace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directed_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directed_cue_patterns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Batch-level bound on outstanding requests.
    pub max_inflight: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    pub strict_digest: bool,
    pub http: HttpConfig,
    pub oracle: OracleOverrides,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            max_inflight: DEFAULT_MAX_INFLIGHT,
            fixture: None,
            strict_digest: false,
            http: HttpConfig::default(),
            oracle: OracleOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E2eSection {
    pub corpus_size: usize,
    /// n-best sizes to compare; the first and last rows decide the verdict.
    pub ladder: Vec<usize>,
    pub channel: ChannelConfig,
}

fn one() -> usize {
    1
}

fn default_budget() -> usize {
    DEFAULT_BUDGET_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub output_mode: OutputMode,
    #[serde(default = "one")]
    pub n: usize,
    /// Ablation flags: `no-tp`, `gib-tp`, `no-hc`.
    #[serde(default)]
    pub ablate: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget_tokens: usize,
    #[serde(default)]
    pub token_counter: CounterKind,
    #[serde(default = "one")]
    pub cost_decimals: usize,
    #[serde(default)]
    pub dedupe_hypotheses: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e2e: Option<E2eSection>,
}

impl RunConfig {
    pub fn new(task: Task, output_mode: OutputMode) -> Self {
        Self {
            task,
            output_mode,
            n: 1,
            ablate: Vec::new(),
            budget_tokens: DEFAULT_BUDGET_TOKENS,
            token_counter: CounterKind::default(),
            cost_decimals: 1,
            dedupe_hypotheses: false,
            manifest: None,
            out: None,
            backend: BackendSection::default(),
            e2e: None,
        }
    }

    /// Keyword spotting with the oracle over the default noisy channel.
    pub fn ks_default() -> Self {
        Self {
            e2e: Some(E2eSection {
                corpus_size: 2000,
                ladder: vec![1, 2, 4, 8],
                channel: ChannelConfig::ks_default(),
            }),
            ..Self::new(Task::Ks, OutputMode::Keyword)
        }
    }

    /// Directedness on the 0-100 scale with the oracle over the default
    /// noisy channel.
    pub fn ddsd_default() -> Self {
        Self {
            e2e: Some(E2eSection {
                corpus_size: 1000,
                ladder: vec![1, 2, 4, 8, 16],
                channel: ChannelConfig::ddsd_default(),
            }),
            ..Self::new(Task::Ddsd, OutputMode::Scale0To100)
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Ks => Self::ks_default(),
            Task::Ddsd => Self::ddsd_default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    pub fn ablations(&self) -> Result<AblationSet, HarnessError> {
        self.ablate
            .iter()
            .map(|f| {
                Ablation::from_flag(f)
                    .ok_or_else(|| HarnessError::Config(format!("unknown ablation {f:?} (use no-tp, gib-tp or no-hc)")))
            })
            .collect()
    }

    pub fn input_mode(&self) -> InputMode {
        if self.n == 1 {
            InputMode::OneBest
        } else {
            InputMode::NBest
        }
    }

    /// Costs are printed for n-best input unless the no-cost ablation is on.
    pub fn include_costs(&self) -> Result<bool, HarnessError> {
        Ok(self.n > 1 && !self.ablations()?.contains(&Ablation::NoHypothesisCost))
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let mut c = OracleConfig::new(self.task, self.output_mode);
        let o = &self.backend.oracle;
        if let Some(t) = o.keyword_threshold {
            c.keyword_threshold = t;
        }
        if let Some(t) = o.directed_threshold {
            c.directed_threshold = t;
        }
        if let Some(p) = &o.directed_cue_patterns {
            c.directed_cue_patterns = p.clone();
        }
        c
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !self.task.supports(self.output_mode) {
            return bad(format!("task {} has no {} output", self.task, self.output_mode));
        }
        let ablations = self.ablations()?;
        if ablations.contains(&Ablation::NoTaskPrompt) && ablations.contains(&Ablation::GibberishTaskPrompt) {
            return bad("no-tp and gib-tp cannot be combined".into());
        }
        if self.budget_tokens == 0 {
            return bad("budget_tokens must be positive".into());
        }
        if self.backend.max_inflight == 0 {
            return bad("max_inflight must be positive".into());
        }
        if let Some(e2e) = &self.e2e {
            if e2e.ladder.is_empty() || e2e.ladder.contains(&0) {
                return bad("e2e ladder needs at least one positive n".into());
            }
            if e2e.corpus_size == 0 {
                return bad("e2e corpus_size must be positive".into());
            }
            if e2e.channel.task != self.task {
                return bad(format!(
                    "channel task {} differs from run task {}",
                    e2e.channel.task, self.task
                ));
            }
            e2e.channel
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
