//! The pipeline stages. Each reads and writes files so any stage can be
//! re-run from its persisted input.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nbest_backend::{
    complete_batch, Backend, BackendKind, CompletionRequest, FixtureBackend, HttpBackend, OracleBackend,
};
use nbest_core::lattice::{extract_nbest_with, load_lattice, serialize_lattice, NBestList, NBestOptions};
use nbest_core::metrics::{evaluate, roc_curve, EvalReport, RocCurve, ScoredExample};
use nbest_core::parse::{parse_binary, parse_keyword, parse_scale, ParsedPrediction, PredictionRecord};
use nbest_core::prompt::{
    builtin_task_prompts, enforce_budget, render, serialize_utterance, ApproxTokenCounter, OutputMode, Task,
    TokenCounter, WhitespaceCounter,
};
use nbest_core::synth::{generate_corpus, ChannelConfig};
use serde::{Deserialize, Serialize};

use crate::config::{CounterKind, RunConfig};
use crate::records::*;
use crate::{HarnessError, StageSummary};

pub const NBEST_FILE: &str = "nbest.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const COMPARISON_FILE: &str = "comparison.json";

fn summary<T>(stage: &'static str, lines: &[Line<T>]) -> StageSummary {
    StageSummary {
        stage,
        total: lines.len(),
        failed: lines.iter().filter(|l| l.is_failed()).count(),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, HarnessError> {
    let entries: Vec<ManifestEntry> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.utterance_id.as_str()) {
            return Err(HarnessError::Config(format!(
                "{}: duplicate utterance id {:?}",
                path.display(),
                e.utterance_id
            )));
        }
    }
    Ok(entries)
}

fn golds(manifest: &[ManifestEntry]) -> HashMap<String, String> {
    manifest
        .iter()
        .map(|e| (e.utterance_id.clone(), e.gold.clone()))
        .collect()
}

/// Lattices named by the manifest to n-best lists.
pub fn cmd_nbest(manifest: &Path, n: usize, dedupe: bool, out: &Path) -> Result<StageSummary, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("n must be at least 1".into()));
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let lines: Vec<Line<NBestList>> = read_manifest(manifest)?
        .into_iter()
        .map(|entry| {
            let path = base.join(&entry.lattice_path);
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) => return Line::failed(&entry.utterance_id, format!("{}: {e}", path.display())),
            };
            match load_lattice(&bytes) {
                Ok(lattice) if lattice.utterance_id() != entry.utterance_id => Line::failed(
                    &entry.utterance_id,
                    format!("{} holds lattice {:?}", path.display(), lattice.utterance_id()),
                ),
                Ok(lattice) => Line::Ok(extract_nbest_with(&lattice, n, NBestOptions { dedupe_words: dedupe })),
                Err(e) => Line::failed(&entry.utterance_id, e),
            }
        })
        .collect();
    write_jsonl(out, &lines)?;
    Ok(summary("nbest", &lines))
}

fn counter(kind: CounterKind) -> &'static dyn TokenCounter {
    match kind {
        CounterKind::Approx => &ApproxTokenCounter,
        CounterKind::Whitespace => &WhitespaceCounter,
    }
}

/// N-best lists to rendered prompts with ablations and the token budget
/// applied.
pub fn cmd_prompt(nbest: &Path, config: &RunConfig, out: &Path) -> Result<StageSummary, HarnessError> {
    config.validate()?;
    let ablations = config.ablations()?;
    let include_costs = config.include_costs()?;
    let registry = builtin_task_prompts();
    let task_prompt = registry
        .lookup(config.task, config.input_mode(), config.output_mode)
        .ok_or_else(|| {
            HarnessError::Config(format!(
                "no task prompt for {} / {} / {}",
                config.task,
                config.input_mode(),
                config.output_mode
            ))
        })?;
    let flags: Vec<String> = ablations.iter().map(|a| a.flag().to_owned()).collect();
    let input: Vec<Line<NBestList>> = read_jsonl(nbest)?;
    let lines: Vec<Line<PromptRecord>> = input
        .into_iter()
        .map(|line| {
            let nb = match line {
                Line::Failed(f) => return Line::Failed(f),
                Line::Ok(nb) => nb.truncated(config.n),
            };
            let bundle = serialize_utterance(&nb, include_costs, config.cost_decimals)
                .and_then(|up| render(Some(task_prompt), up, &ablations))
                .and_then(|b| enforce_budget(b, &nb, config.budget_tokens, counter(config.token_counter)));
            match bundle {
                Ok(outcome) => Line::Ok(PromptRecord {
                    utterance_id: nb.utterance_id,
                    rendered: outcome.bundle.rendered,
                    ablations: flags.clone(),
                    hypothesis_count: outcome.bundle.utterance_prompt.hypothesis_count,
                    dropped_hypotheses: outcome.dropped,
                }),
                Err(e) => Line::failed(nb.utterance_id, e),
            }
        })
        .collect();
    write_jsonl(out, &lines)?;
    Ok(summary("prompt", &lines))
}

pub fn build_backend(config: &RunConfig) -> Result<Box<dyn Backend>, HarnessError> {
    Ok(match config.backend.kind {
        BackendKind::Oracle => Box::new(OracleBackend::new(&config.oracle_config())?),
        BackendKind::Fixture => {
            let path = config
                .backend
                .fixture
                .as_deref()
                .ok_or_else(|| HarnessError::Config("the fixture backend needs a fixture file".into()))?;
            let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
            Box::new(FixtureBackend::from_jsonl(
                BufReader::new(file),
                config.backend.strict_digest,
            )?)
        }
        BackendKind::Http => Box::new(HttpBackend::new(config.backend.http.clone())?),
    })
}

/// Prompts to raw completions, in prompt-file order.
pub async fn cmd_infer(
    prompts: &Path,
    backend: &dyn Backend,
    max_inflight: usize,
    out: &Path,
) -> Result<StageSummary, HarnessError> {
    let input: Vec<Line<PromptRecord>> = read_jsonl(prompts)?;
    let requests: Vec<CompletionRequest> = input
        .iter()
        .filter_map(|l| match l {
            Line::Ok(p) => Some(CompletionRequest::new(&p.utterance_id, &p.rendered)),
            Line::Failed(_) => None,
        })
        .collect();
    let mut results = complete_batch(backend, &requests, max_inflight).await.into_iter();
    let lines: Vec<Line<ResponseRecord>> = input
        .into_iter()
        .map(|line| match line {
            Line::Failed(f) => Line::Failed(f),
            Line::Ok(p) => match results.next().expect("one result per request") {
                Ok(r) => Line::Ok(ResponseRecord {
                    utterance_id: r.utterance_id,
                    raw_text: r.raw_text,
                    backend: r.backend,
                }),
                Err(e) => Line::Failed(FailedRecord {
                    utterance_id: p.utterance_id,
                    attempts: e.attempts(),
                    error: e.to_string(),
                }),
            },
        })
        .collect();
    write_jsonl(out, &lines)?;
    Ok(summary("infer", &lines))
}

pub fn parse_response(output_mode: OutputMode, utterance_id: &str, raw: &str) -> ParsedPrediction {
    match output_mode {
        OutputMode::BinaryTarget => parse_binary(utterance_id, raw),
        OutputMode::Scale0To100 => parse_scale(utterance_id, raw),
        OutputMode::Keyword => parse_keyword(utterance_id, raw),
    }
}

/// Raw completions to predictions, a report and, for scale output, an ROC
/// curve. Failed utterances are left out of the metrics.
pub fn cmd_score(
    responses: &Path,
    manifest: &Path,
    output_mode: OutputMode,
    out_dir: &Path,
) -> Result<(StageSummary, EvalReport), HarnessError> {
    let golds = golds(&read_manifest(manifest)?);
    let input: Vec<Line<ResponseRecord>> = read_jsonl(responses)?;
    let mut preds = Vec::new();
    let lines: Vec<Line<PredictionRecord>> = input
        .into_iter()
        .map(|line| match line {
            Line::Failed(f) => Line::Failed(f),
            Line::Ok(r) => {
                let p = parse_response(output_mode, &r.utterance_id, &r.raw_text);
                let record = PredictionRecord::from(&p);
                preds.push(p);
                Line::Ok(record)
            }
        })
        .collect();
    let (report, curve) = evaluate(&preds, &golds)?;
    write_jsonl(&out_dir.join(PREDICTIONS_FILE), &lines)?;
    write_text(
        &out_dir.join(REPORT_FILE),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    if let Some(curve) = curve {
        write_text(&out_dir.join(ROC_FILE), &curve.to_csv())?;
    }
    Ok((summary("score", &lines), report))
}

/// ROC curve of binary or scale predictions.
pub fn cmd_roc(predictions: &Path, manifest: &Path, out: &Path) -> Result<RocCurve, HarnessError> {
    let golds = golds(&read_manifest(manifest)?);
    let input: Vec<Line<PredictionRecord>> = read_jsonl(predictions)?;
    let mut examples = Vec::new();
    for (i, line) in input.into_iter().enumerate() {
        let Line::Ok(record) = line else { continue };
        let bad = |message: String| HarnessError::BadLine {
            path: predictions.to_owned(),
            line: i + 1,
            message,
        };
        let p = ParsedPrediction::try_from(record).map_err(|e| bad(e.to_string()))?;
        let score = p
            .score()
            .ok_or_else(|| bad("keyword predictions have no ROC curve".into()))?;
        let gold = match golds.get(&p.utterance_id).map(String::as_str) {
            Some("1") => true,
            Some("0") => false,
            Some(other) => return Err(bad(format!("gold {other:?} is not 0 or 1"))),
            None => return Err(nbest_core::metrics::MetricsError::UnknownId(p.utterance_id).into()),
        };
        examples.push(ScoredExample::new(p.utterance_id, score, gold));
    }
    let curve = roc_curve(&examples)?;
    write_text(out, &curve.to_csv())?;
    Ok(curve)
}

/// A synthetic corpus: `manifest.jsonl` plus one lattice file per
/// utterance under `lattices/`.
pub fn cmd_synth(channel: &ChannelConfig, size: usize, out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let corpus = generate_corpus(channel, size).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut manifest = Vec::with_capacity(corpus.len());
    for u in &corpus {
        let rel = format!("lattices/{}.json", u.utterance_id);
        write_text(&out_dir.join(&rel), &(serialize_lattice(&u.lattice) + "\n"))?;
        manifest.push(ManifestEntry {
            utterance_id: u.utterance_id.clone(),
            gold: u.gold.clone(),
            reference: u.reference_words.join(" "),
            lattice_path: rel,
        });
    }
    let path = out_dir.join(MANIFEST_FILE);
    write_jsonl(&path, &manifest)?;
    Ok(path)
}

/// nbest, prompt, infer and score into `out_dir`.
pub async fn run_pipeline(
    config: &RunConfig,
    manifest: &Path,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<(Vec<StageSummary>, EvalReport), HarnessError> {
    config.validate()?;
    let nbest = out_dir.join(NBEST_FILE);
    let prompts = out_dir.join(PROMPTS_FILE);
    let responses = out_dir.join(RESPONSES_FILE);
    let mut stages = vec![
        cmd_nbest(manifest, config.n, config.dedupe_hypotheses, &nbest)?,
        cmd_prompt(&nbest, config, &prompts)?,
        cmd_infer(&prompts, backend, config.backend.max_inflight, &responses).await?,
    ];
    let (score, report) = cmd_score(&responses, manifest, config.output_mode, out_dir)?;
    stages.push(score);
    Ok((stages, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NBestBetter,
    OneBestBetter,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n: usize,
    /// The value the verdict compares; see `Comparison::metric`.
    pub value: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: Task,
    pub output_mode: OutputMode,
    pub corpus_size: usize,
    /// `total_accuracy`, `eer` or `tpr_minus_fpr`.
    pub metric: String,
    pub higher_is_better: bool,
    pub rows: Vec<ComparisonRow>,
    /// First ladder row against the last.
    pub verdict: Verdict,
    pub failed_utterances: usize,
}

impl Comparison {
    pub fn row(&self, n: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

fn headline(output_mode: OutputMode, report: &EvalReport) -> (&'static str, bool, f64) {
    match output_mode {
        OutputMode::Keyword => ("total_accuracy", true, report.total_accuracy.unwrap_or(0.0)),
        OutputMode::Scale0To100 => ("eer", false, report.eer.unwrap_or(1.0)),
        OutputMode::BinaryTarget => (
            "tpr_minus_fpr",
            true,
            report.tpr.unwrap_or(0.0) - report.fpr.unwrap_or(1.0),
        ),
    }
}

/// Generates the configured corpus once and runs the pipeline for every n
/// in the ladder over the same lattices.
pub async fn cmd_e2e(config: &RunConfig, out_dir: &Path) -> Result<Comparison, HarnessError> {
    config.validate()?;
    let e2e = config
        .e2e
        .as_ref()
        .ok_or_else(|| HarnessError::Config("e2e needs an [e2e] section with channel settings".into()))?;
    if config.backend.kind == BackendKind::Http {
        return Err(HarnessError::Config(
            "e2e runs offline; use the oracle or fixture backend".into(),
        ));
    }
    let manifest = cmd_synth(&e2e.channel, e2e.corpus_size, &out_dir.join("corpus"))?;
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut metric = ("", true);
    for &n in &e2e.ladder {
        let run = RunConfig { n, ..config.clone() };
        let backend = build_backend(&run)?;
        let (stages, report) = run_pipeline(&run, &manifest, backend.as_ref(), &out_dir.join(format!("n{n}"))).await?;
        failed += stages.iter().map(|s| s.failed).max().unwrap_or(0);
        let (name, higher, value) = headline(config.output_mode, &report);
        metric = (name, higher);
        rows.push(ComparisonRow { n, value, report });
    }
    let first = rows.first().expect("ladder is non-empty").value;
    let last = rows.last().expect("ladder is non-empty").value;
    let verdict = if first == last {
        Verdict::Tie
    } else if (last > first) == metric.1 {
        Verdict::NBestBetter
    } else {
        Verdict::OneBestBetter
    };
    let comparison = Comparison {
        task: config.task,
        output_mode: config.output_mode,
        corpus_size: e2e.corpus_size,
        metric: metric.0.to_owned(),
        higher_is_better: metric.1,
        rows,
        verdict,
        failed_utterances: failed,
    };
    write_text(
        &out_dir.join(COMPARISON_FILE),
        &(serde_json::to_string_pretty(&comparison).expect("comparison serializes") + "\n"),
    )?;
    Ok(comparison)
}
