//! A deterministic stand-in for a tuned model, driven only by the prompt.
//!
//! The oracle strips any known task prompt from the front of the prompt,
//! reads the remaining n-best block and turns hypothesis costs into a
//! posterior with a stabilized softmax. When the block carries no costs
//! (1-best input or the no-cost ablation) rank `i` gets pseudo-cost `i`.

use std::time::Instant;

use async_trait::async_trait;
use nbest_core::keyword::Keyword;
use nbest_core::lattice::{Hypothesis, NBestList};
use nbest_core::parse::probability_to_scale_label;
use nbest_core::prompt::{builtin_task_prompts, gibberish_task_prompt, split_cost, OutputMode, Task};
use nbest_core::synth::DDSD_CUE_WORDS;
use regex::RegexSet;
use serde::{Deserialize, Serialize};

use crate::{Backend, BackendError, BackendKind, CompletionRequest, CompletionResponse};

pub const DEFAULT_KEYWORD_THRESHOLD: f64 = 0.3;
pub const DEFAULT_DIRECTED_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub task: Task,
    pub output_mode: OutputMode,
    /// Candidate keywords in tie-breaking order.
    pub keyword_set: Vec<Keyword>,
    /// Regexes; a hypothesis matching any of them counts as device-directed.
    pub directed_cue_patterns: Vec<String>,
    pub keyword_threshold: f64,
    pub directed_threshold: f64,
}

impl OracleConfig {
    pub fn new(task: Task, output_mode: OutputMode) -> Self {
        Self {
            task,
            output_mode,
            keyword_set: Keyword::COMMANDS.to_vec(),
            directed_cue_patterns: DDSD_CUE_WORDS.iter().map(|w| format!(r"\b{w}\b")).collect(),
            keyword_threshold: DEFAULT_KEYWORD_THRESHOLD,
            directed_threshold: DEFAULT_DIRECTED_THRESHOLD,
        }
    }

    pub fn compile(&self) -> Result<Oracle, BackendError> {
        let bad = |m: String| Err(BackendError::Config(m));
        if !self.task.supports(self.output_mode) {
            return bad(format!("task {} has no {} output", self.task, self.output_mode));
        }
        if self.task == Task::Ks && self.keyword_set != Keyword::COMMANDS {
            return bad("keyword_set must be the ten command words in their standard order".into());
        }
        for (name, t) in [
            ("keyword_threshold", self.keyword_threshold),
            ("directed_threshold", self.directed_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} = {t} is outside [0, 1]"));
            }
        }
        let cues = RegexSet::new(&self.directed_cue_patterns)
            .map_err(|e| BackendError::Config(format!("directed cue pattern: {e}")))?;
        Ok(Oracle {
            config: self.clone(),
            cues,
        })
    }
}

/// `p_i = exp(-c_i - M) / sum_j exp(-c_j - M)` with `M = max_j(-c_j)`.
pub fn oracle_posterior(nbest: &NBestList) -> Vec<f64> {
    let m = nbest
        .hypotheses
        .iter()
        .map(|h| -h.cost)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = nbest.hypotheses.iter().map(|h| (-h.cost - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// A validated [`OracleConfig`] with its cue patterns compiled.
#[derive(Debug, Clone)]
pub struct Oracle {
    config: OracleConfig,
    cues: RegexSet,
}

impl Oracle {
    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Posterior mass of each keyword in `keyword_set`, in that order.
    pub fn keyword_mass(&self, nbest: &NBestList) -> Vec<(Keyword, f64)> {
        let posterior = oracle_posterior(nbest);
        self.config
            .keyword_set
            .iter()
            .map(|&k| {
                let mass = nbest
                    .hypotheses
                    .iter()
                    .zip(&posterior)
                    .filter(|(h, _)| Keyword::from_words(&h.words) == Some(k))
                    .map(|(_, p)| p)
                    .sum();
                (k, mass)
            })
            .collect()
    }

    /// Posterior mass of hypotheses matching a directed cue pattern.
    pub fn directed_mass(&self, nbest: &NBestList) -> f64 {
        let mass: f64 = nbest
            .hypotheses
            .iter()
            .zip(oracle_posterior(nbest))
            .filter(|(h, _)| self.cues.is_match(&h.text()))
            .map(|(_, p)| p)
            .sum();
        mass.clamp(0.0, 1.0)
    }

    pub fn decide(&self, nbest: &NBestList) -> String {
        match self.config.output_mode {
            OutputMode::Keyword => {
                let mut best: Option<(Keyword, f64)> = None;
                for (k, mass) in self.keyword_mass(nbest) {
                    // Strict comparison keeps the earlier keyword on ties.
                    if best.is_none_or(|(_, m)| mass > m) {
                        best = Some((k, mass));
                    }
                }
                match best {
                    Some((k, mass)) if mass >= self.config.keyword_threshold => k.as_str().to_owned(),
                    _ => Keyword::Oov.as_str().to_owned(),
                }
            }
            OutputMode::BinaryTarget => {
                let directed = self.directed_mass(nbest) >= self.config.directed_threshold;
                if directed { "1" } else { "0" }.to_owned()
            }
            OutputMode::Scale0To100 => probability_to_scale_label(self.directed_mass(nbest))
                .expect("directed mass is clamped to [0, 1]")
                .to_string(),
        }
    }
}

/// Every task-prompt text the builtin registry can render, plus the
/// gibberish replacement, longest first.
pub fn known_preambles() -> Vec<String> {
    let registry = builtin_task_prompts();
    let mut texts: Vec<String> = registry
        .iter()
        .flat_map(|tp| [tp.text(), gibberish_task_prompt(tp).text()])
        .collect();
    texts.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    texts.dedup();
    texts
}

/// Recovers the n-best block from a rendered prompt. Lines keep their
/// printed costs when every line has one; otherwise rank `i` costs `i`.
pub fn nbest_from_prompt(utterance_id: &str, prompt: &str, preambles: &[String]) -> NBestList {
    let block = preambles
        .iter()
        .find_map(|p| prompt.strip_prefix(p.as_str()).and_then(|rest| rest.strip_prefix(' ')))
        .unwrap_or(prompt);
    let lines: Vec<&str> = block.split('\n').collect();
    let costed: Option<Vec<(&str, f64)>> = lines.iter().map(|l| split_cost(l)).collect();
    let hypotheses = match costed {
        Some(items) => items
            .into_iter()
            .map(|(words, cost)| Hypothesis::from_text(words, cost))
            .collect(),
        None => lines
            .iter()
            .enumerate()
            .map(|(i, l)| Hypothesis::from_text(l, i as f64))
            .collect(),
    };
    NBestList {
        utterance_id: utterance_id.to_owned(),
        n_requested: lines.len(),
        hypotheses,
    }
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    oracle: Oracle,
    preambles: Vec<String>,
}

impl OracleBackend {
    pub fn new(config: &OracleConfig) -> Result<Self, BackendError> {
        Ok(Self {
            oracle: config.compile()?,
            preambles: known_preambles(),
        })
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }
}

#[async_trait]
impl Backend for OracleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Oracle
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let started = Instant::now();
        let nbest = nbest_from_prompt(&request.utterance_id, &request.prompt, &self.preambles);
        Ok(CompletionResponse {
            utterance_id: request.utterance_id.clone(),
            raw_text: self.oracle.decide(&nbest),
            backend: BackendKind::Oracle,
            latency: started.elapsed(),
        })
    }
}
