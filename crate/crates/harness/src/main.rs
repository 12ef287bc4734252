use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbest_backend::BackendKind;
use nbest_core::prompt::{OutputMode, Task};
use nbest_harness::*;

#[derive(Parser)]
#[command(
    name = "nbest",
    version,
    about = "Prompt a language model with ASR n-best lists and score the answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract n-best lists from the lattices in a manifest.
    Nbest(Opts),
    /// Render prompts from <out>/nbest.jsonl.
    Prompt(Opts),
    /// Send <out>/prompts.jsonl to a backend.
    Infer(Opts),
    /// Parse <out>/responses.jsonl and evaluate against manifest golds.
    Score(Opts),
    /// Write <out>/roc.csv from <out>/predictions.jsonl.
    Roc(Opts),
    /// Generate a synthetic corpus into <out>.
    Synth(Opts),
    /// Synthesize a corpus and compare the n ladder end to end.
    E2e(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    output_mode: Option<OutputMode>,
    /// no-tp, gib-tp or no-hc; repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Fixture file for the fixture backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Channel seed for synth and e2e.
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus size for synth and e2e.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    max_inflight: Option<usize>,
}

impl Opts {
    fn run_config(&self) -> Result<RunConfig, HarnessError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default_for(self.task.unwrap_or(Task::Ks)),
        };
        if let Some(task) = self.task {
            if task != c.task {
                let output_mode = RunConfig::default_for(task).output_mode;
                c.task = task;
                c.output_mode = output_mode;
                if let Some(e2e) = &mut c.e2e {
                    *e2e = RunConfig::default_for(task).e2e.expect("defaults carry an e2e section");
                }
            }
        }
        if let Some(n) = self.n {
            c.n = n;
        }
        if let Some(m) = self.output_mode {
            c.output_mode = m;
        }
        if !self.ablate.is_empty() {
            c.ablate = self.ablate.clone();
        }
        if let Some(b) = self.backend {
            c.backend.kind = b;
        }
        if let Some(f) = &self.fixture {
            c.backend.fixture = Some(f.clone());
        }
        if let Some(b) = self.budget {
            c.budget_tokens = b;
        }
        if let Some(m) = &self.manifest {
            c.manifest = Some(m.clone());
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if let Some(k) = self.max_inflight {
            c.backend.max_inflight = k;
            c.backend.http.max_inflight = k;
        }
        if let Some(e2e) = &mut c.e2e {
            if let Some(seed) = self.seed {
                e2e.channel.seed = seed;
            }
            if let Some(size) = self.size {
                e2e.corpus_size = size;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, HarnessError> {
    value
        .as_deref()
        .ok_or_else(|| HarnessError::Config(format!("--{flag} is required")))
}

async fn run(command: Command) -> Result<u8, HarnessError> {
    let (opts, name) = match &command {
        Command::Nbest(o) => (o, "nbest"),
        Command::Prompt(o) => (o, "prompt"),
        Command::Infer(o) => (o, "infer"),
        Command::Score(o) => (o, "score"),
        Command::Roc(o) => (o, "roc"),
        Command::Synth(o) => (o, "synth"),
        Command::E2e(o) => (o, "e2e"),
    };
    let config = opts.run_config()?;
    let out = required(&config.out, "out")?;
    let summary = match name {
        "nbest" => {
            let manifest = required(&config.manifest, "manifest")?;
            cmd_nbest(manifest, config.n, config.dedupe_hypotheses, &out.join(NBEST_FILE))?
        }
        "prompt" => cmd_prompt(&out.join(NBEST_FILE), &config, &out.join(PROMPTS_FILE))?,
        "infer" => {
            let backend = build_backend(&config)?;
            cmd_infer(
                &out.join(PROMPTS_FILE),
                backend.as_ref(),
                config.backend.max_inflight,
                &out.join(RESPONSES_FILE),
            )
            .await?
        }
        "score" => {
            let manifest = required(&config.manifest, "manifest")?;
            let (summary, report) = cmd_score(&out.join(RESPONSES_FILE), manifest, config.output_mode, out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            summary
        }
        "roc" => {
            let manifest = required(&config.manifest, "manifest")?;
            let curve = cmd_roc(&out.join(PREDICTIONS_FILE), manifest, &out.join(ROC_FILE))?;
            println!("auc {:.6} eer {:.6}", nbest_core::auc(&curve), nbest_core::eer(&curve));
            return Ok(0);
        }
        "synth" => {
            let e2e = config
                .e2e
                .as_ref()
                .ok_or_else(|| HarnessError::Config("synth needs an [e2e] section".into()))?;
            let manifest = cmd_synth(&e2e.channel, e2e.corpus_size, out)?;
            println!("{}", manifest.display());
            return Ok(0);
        }
        _ => {
            let comparison = cmd_e2e(&config, out).await?;
            for row in &comparison.rows {
                println!("n={:<3} {} {:.4}", row.n, comparison.metric, row.value);
            }
            println!(
                "verdict {}",
                serde_json::to_string(&comparison.verdict).expect("verdict serializes")
            );
            return Ok(if comparison.failed_utterances == 0 { 0 } else { 2 });
        }
    };
    eprintln!("{summary}");
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    // Usage errors exit 1; clap's default of 2 means partial failure here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
