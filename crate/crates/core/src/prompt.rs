//! Utterance-prompt serialization, task-prompt registry, rendering and the
//! token budget.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::NBestList;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("n-best list for {0:?} is empty")]
    EmptyNBest(String),
    #[error("word {word:?} in {utterance_id:?} contains whitespace")]
    InvalidWord { utterance_id: String, word: String },
    #[error("ablations no_task_prompt and gibberish_task_prompt are mutually exclusive")]
    InconsistentAblations,
    #[error("no_hypothesis_cost requested but the utterance prompt for {0:?} carries costs")]
    CostsPresent(String),
    #[error("no task prompt given and the no_task_prompt ablation is not set")]
    MissingTaskPrompt,
    #[error("task {task} does not support output mode {output}")]
    IncompatibleModes { task: Task, output: OutputMode },
    #[error("{utterance_id:?} needs {tokens} tokens with only the 1-best kept, budget is {budget}")]
    BudgetUnsatisfiable {
        utterance_id: String,
        tokens: usize,
        budget: usize,
    },
    #[error("n-best list {nbest:?} does not match prompt {prompt:?}")]
    Mismatch { prompt: String, nbest: String },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {}: {other:?}", stringify!($name))),
                }
            }
        }
    };
}

string_enum!(Task { Ddsd => "ddsd", Ks => "ks" });
string_enum!(InputMode { OneBest => "one_best", NBest => "n_best" });
string_enum!(OutputMode {
    BinaryTarget => "binary_target",
    Scale0To100 => "scale_0_100",
    Keyword => "keyword",
});
string_enum!(Ablation {
    NoTaskPrompt => "no_task_prompt",
    GibberishTaskPrompt => "gibberish_task_prompt",
    NoHypothesisCost => "no_hypothesis_cost",
});

impl Task {
    pub fn supports(self, output: OutputMode) -> bool {
        matches!(
            (self, output),
            (Task::Ddsd, OutputMode::BinaryTarget | OutputMode::Scale0To100) | (Task::Ks, OutputMode::Keyword)
        )
    }
}

impl Ablation {
    /// Short command-line spelling (`no-tp`, `gib-tp`, `no-hc`).
    pub fn flag(self) -> &'static str {
        match self {
            Ablation::NoTaskPrompt => "no-tp",
            Ablation::GibberishTaskPrompt => "gib-tp",
            Ablation::NoHypothesisCost => "no-hc",
        }
    }

    pub fn from_flag(flag: &str) -> Option<Ablation> {
        [
            Ablation::NoTaskPrompt,
            Ablation::GibberishTaskPrompt,
            Ablation::NoHypothesisCost,
        ]
        .into_iter()
        .find(|a| a.flag() == flag || a.as_str() == flag)
    }
}

pub type AblationSet = BTreeSet<Ablation>;

/// Where a built-in task prompt's wording comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrigin {
    /// The reference DDSD wording, reproduced verbatim.
    Reference,
    /// Keyword-spotting wording from an unpublished draft table.
    Draft,
    /// Wording written for this project.
    Authored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub task: Task,
    pub input_mode: InputMode,
    pub output_mode: OutputMode,
    pub prefix: String,
    pub infix: String,
    pub suffix: String,
    pub origin: PromptOrigin,
}

impl TaskPrompt {
    /// Prefix, infix and suffix joined by single spaces.
    pub fn text(&self) -> String {
        format!("{} {} {}", self.prefix, self.infix, self.suffix)
    }
}

pub const DDSD_ONE_BEST_PREFIX: &str =
    "Determine whether the following spoken utterance is directed towards a voice assistant or a human being.";
pub const DDSD_N_BEST_PREFIX: &str = "In this task, we provide an n-best list of ASR hypotheses for a spoken utterance. Each of the hypothesis is separated by a newline character. The cost of each hypothesis is at the end in the format '[cost]' where a low cost indicates that we are more confident about that ASR hypothesis. Determine whether the following spoken utterance is directed towards a voice assistant or a human being by taking into account all the n-best hypotheses.";
pub const DDSD_INFIX: &str = "Typical spoken utterances directed towards the voice assistant are commands to fulfill a task or queries to get some information.";
pub const DDSD_BINARY_SUFFIX: &str = "Answer only from the following categories ['1', '0'] where '1' indicates that the utterance is directed towards the voice assistant and '0' indicates that the utterance is directed towards a human being.";
pub const DDSD_SCALE_SUFFIX: &str = "Answer on a scale of 0 to 100 where a score of '100' indicates that the utterance is directed towards the voice assistant and '0' indicates that the utterance is directed towards a human being. Your answer should only contain an integer between 0 and 100.";

/// Keyword-spotting wording; the 1-best and n-best variants differ only in
/// the infix. Kept byte-for-byte, including the unbalanced quote in "stop'".
pub const KS_PREFIX: &str = "In this task, we are doing keyword spotting where the words of interest are 'yes', 'no', 'up', 'down', 'left', 'right', 'on', 'off', stop', and 'go'. All other words are considered out-of-vocabulary.";
pub const KS_ONE_BEST_INFIX: &str = "Using the given ASR hypothesis, identify the keyword spoken in the utterance.";
pub const KS_N_BEST_INFIX: &str = "We provide an n-best list of ASR hypotheses for a spoken utterance. Each of the hypothesis is separated by a newline character. The cost of each hypothesis is at the end in the format '[cost]' where a low cost indicates that we are more confident about that ASR hypothesis. The correct word is expected to have a low cost. Taking into account all the n-best hypotheses, identify the keyword spoken in the utterance.";
pub const KS_SUFFIX: &str = "Your answer must be from the following allowed list of keywords: ['yes', 'no', 'up', 'down', 'left', 'right', 'on', 'off', 'stop', 'go', 'OOV'] where OOV represents out-of-vocabulary words. Your answer should only be one word long. The utterance is:";

/// Fixed pseudo-word text used by the gibberish ablation.
pub const GIBBERISH_PREFIX: &str = "Vorlim askent dabu frenost quilarine mepto sarvok, lindemar tusk obrelani vesh pondral kivu tarsem olibrade nuskavel. Drobem ilquast venari posk tuvellin, marosk ebdila quen surravot hinnel okrasta bedimol firn.";
pub const GIBBERISH_INFIX: &str =
    "Grenn tavosi lupremar echtal vindo sarpe kumelith baroshen tiv glaspor nemuri ostrav pelk.";
pub const GIBBERISH_SUFFIX: &str = "Plivek oruna dastemi volkar enthi bramolen sukatra, ivven drozel mippa tarnuvi solkem quarrin ebbastol. Fendrik alumo zestavi korn uplidda vanshe morrel.";

#[derive(Debug, Clone)]
pub struct PromptRegistry {
    prompts: Vec<TaskPrompt>,
}

impl PromptRegistry {
    pub fn lookup(&self, task: Task, input: InputMode, output: OutputMode) -> Option<&TaskPrompt> {
        self.prompts
            .iter()
            .find(|p| p.task == task && p.input_mode == input && p.output_mode == output)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskPrompt> {
        self.prompts.iter()
    }
}

pub fn builtin_task_prompts() -> PromptRegistry {
    let mut prompts = Vec::new();
    for input in [InputMode::OneBest, InputMode::NBest] {
        let prefix = match input {
            InputMode::OneBest => DDSD_ONE_BEST_PREFIX,
            InputMode::NBest => DDSD_N_BEST_PREFIX,
        };
        for (output, suffix) in [
            (OutputMode::BinaryTarget, DDSD_BINARY_SUFFIX),
            (OutputMode::Scale0To100, DDSD_SCALE_SUFFIX),
        ] {
            prompts.push(TaskPrompt {
                task: Task::Ddsd,
                input_mode: input,
                output_mode: output,
                prefix: prefix.into(),
                infix: DDSD_INFIX.into(),
                suffix: suffix.into(),
                origin: PromptOrigin::Reference,
            });
        }
        prompts.push(TaskPrompt {
            task: Task::Ks,
            input_mode: input,
            output_mode: OutputMode::Keyword,
            prefix: KS_PREFIX.into(),
            infix: match input {
                InputMode::OneBest => KS_ONE_BEST_INFIX,
                InputMode::NBest => KS_N_BEST_INFIX,
            }
            .into(),
            suffix: KS_SUFFIX.into(),
            origin: PromptOrigin::Draft,
        });
    }
    PromptRegistry { prompts }
}

/// The gibberish stand-in for `original`, keeping its task and modes.
pub fn gibberish_task_prompt(original: &TaskPrompt) -> TaskPrompt {
    TaskPrompt {
        prefix: GIBBERISH_PREFIX.into(),
        infix: GIBBERISH_INFIX.into(),
        suffix: GIBBERISH_SUFFIX.into(),
        origin: PromptOrigin::Authored,
        ..original.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtterancePrompt {
    pub utterance_id: String,
    pub text: String,
    pub hypothesis_count: usize,
    pub costs_included: bool,
    pub cost_decimals: usize,
}

pub fn format_cost(cost: f64, decimals: usize) -> String {
    format!("{cost:.decimals$}")
}

/// One line per hypothesis, words joined by single spaces, optionally
/// followed by ` [cost]`; lines joined by `\n` in n-best order.
pub fn serialize_utterance(
    nbest: &NBestList,
    include_costs: bool,
    cost_decimals: usize,
) -> Result<UtterancePrompt, PromptError> {
    if nbest.hypotheses.is_empty() {
        return Err(PromptError::EmptyNBest(nbest.utterance_id.clone()));
    }
    let mut lines = Vec::with_capacity(nbest.hypotheses.len());
    for h in &nbest.hypotheses {
        if let Some(w) = h
            .words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(PromptError::InvalidWord {
                utterance_id: nbest.utterance_id.clone(),
                word: w.clone(),
            });
        }
        let words = h.words.join(" ");
        lines.push(match (include_costs, words.is_empty()) {
            (false, _) => words,
            (true, true) => format!("[{}]", format_cost(h.cost, cost_decimals)),
            (true, false) => format!("{words} [{}]", format_cost(h.cost, cost_decimals)),
        });
    }
    Ok(UtterancePrompt {
        utterance_id: nbest.utterance_id.clone(),
        text: lines.join("\n"),
        hypothesis_count: nbest.hypotheses.len(),
        costs_included: include_costs,
        cost_decimals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceLine {
    pub words: Vec<String>,
    pub cost: Option<f64>,
}

/// Splits a trailing ` [number]` token off a line.
pub fn split_cost(line: &str) -> Option<(&str, f64)> {
    let body = line.strip_suffix(']')?;
    let (words, number) = body.rsplit_once('[')?;
    let cost: f64 = number.parse().ok()?;
    if !cost.is_finite() || !(words.is_empty() || words.ends_with(' ')) {
        return None;
    }
    Some((words.trim_end(), cost))
}

/// Inverse of [`serialize_utterance`].
pub fn parse_utterance(text: &str, costs_included: bool) -> Result<Vec<UtteranceLine>, PromptError> {
    text.split('\n')
        .enumerate()
        .map(|(i, line)| {
            if costs_included {
                let (words, cost) = split_cost(line).ok_or_else(|| PromptError::MalformedLine {
                    line: i + 1,
                    reason: format!("no trailing [cost] token in {line:?}"),
                })?;
                Ok(UtteranceLine {
                    words: words.split_whitespace().map(str::to_owned).collect(),
                    cost: Some(cost),
                })
            } else {
                Ok(UtteranceLine {
                    words: line.split_whitespace().map(str::to_owned).collect(),
                    cost: None,
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_prompt: Option<TaskPrompt>,
    pub utterance_prompt: UtterancePrompt,
    pub rendered: String,
    pub ablations: AblationSet,
}

fn compose(task_prompt: Option<&TaskPrompt>, utterance_text: &str) -> String {
    match task_prompt {
        Some(tp) => format!("{} {utterance_text}", tp.text()),
        None => utterance_text.to_owned(),
    }
}

pub fn render(
    task_prompt: Option<&TaskPrompt>,
    utterance_prompt: UtterancePrompt,
    ablations: &AblationSet,
) -> Result<PromptBundle, PromptError> {
    if ablations.contains(&Ablation::NoTaskPrompt) && ablations.contains(&Ablation::GibberishTaskPrompt) {
        return Err(PromptError::InconsistentAblations);
    }
    if ablations.contains(&Ablation::NoHypothesisCost) && utterance_prompt.costs_included {
        return Err(PromptError::CostsPresent(utterance_prompt.utterance_id));
    }
    if let Some(tp) = task_prompt {
        if !tp.task.supports(tp.output_mode) {
            return Err(PromptError::IncompatibleModes {
                task: tp.task,
                output: tp.output_mode,
            });
        }
    }
    let effective = if ablations.contains(&Ablation::NoTaskPrompt) {
        None
    } else {
        let tp = task_prompt.ok_or(PromptError::MissingTaskPrompt)?;
        Some(if ablations.contains(&Ablation::GibberishTaskPrompt) {
            gibberish_task_prompt(tp)
        } else {
            tp.clone()
        })
    };
    let rendered = compose(effective.as_ref(), &utterance_prompt.text);
    Ok(PromptBundle {
        task_prompt: effective,
        utterance_prompt,
        rendered,
        ablations: ablations.clone(),
    })
}

pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Whitespace-delimited token count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Whitespace tokens times 1.3, rounded up. Stands in for a subword tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * 13).div_ceil(10)
    }
}

pub const DEFAULT_BUDGET_TOKENS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetOutcome {
    pub bundle: PromptBundle,
    pub dropped: usize,
}

/// Drops hypotheses from the end of the list until the rendered prompt fits.
pub fn enforce_budget(
    bundle: PromptBundle,
    nbest: &NBestList,
    budget_tokens: usize,
    counter: &dyn TokenCounter,
) -> Result<BudgetOutcome, PromptError> {
    let up = &bundle.utterance_prompt;
    if up.utterance_id != nbest.utterance_id || up.hypothesis_count > nbest.hypotheses.len() {
        return Err(PromptError::Mismatch {
            prompt: up.utterance_id.clone(),
            nbest: nbest.utterance_id.clone(),
        });
    }
    if counter.count(&bundle.rendered) <= budget_tokens {
        return Ok(BudgetOutcome { bundle, dropped: 0 });
    }
    let original = up.hypothesis_count;
    let mut tokens = 0;
    for keep in (1..original).rev() {
        let utterance_prompt = serialize_utterance(&nbest.truncated(keep), up.costs_included, up.cost_decimals)?;
        let rendered = compose(bundle.task_prompt.as_ref(), &utterance_prompt.text);
        tokens = counter.count(&rendered);
        if tokens <= budget_tokens {
            return Ok(BudgetOutcome {
                bundle: PromptBundle {
                    utterance_prompt,
                    rendered,
                    ..bundle
                },
                dropped: original - keep,
            });
        }
    }
    if original == 1 {
        tokens = counter.count(&bundle.rendered);
    }
    Err(PromptError::BudgetUnsatisfiable {
        utterance_id: nbest.utterance_id.clone(),
        tokens,
        budget: budget_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Hypothesis;

    fn nbest(items: &[(&str, f64)]) -> NBestList {
        NBestList {
            utterance_id: "u".into(),
            n_requested: items.len(),
            hypotheses: items.iter().map(|(t, c)| Hypothesis::from_text(t, *c)).collect(),
        }
    }

    #[test]
    fn single_line_with_cost() {
        let up = serialize_utterance(&nbest(&[("yes", -6.0)]), true, 1).unwrap();
        assert_eq!(up.text, "yes [-6.0]");
        assert_eq!(up.hypothesis_count, 1);
    }

    #[test]
    fn empty_nbest_rejected() {
        assert_eq!(
            serialize_utterance(&nbest(&[]), true, 1),
            Err(PromptError::EmptyNBest("u".into()))
        );
    }

    #[test]
    fn empty_hypothesis_serializes_as_bare_cost() {
        let up = serialize_utterance(&nbest(&[("", 0.0), ("go", 1.25)]), true, 2).unwrap();
        assert_eq!(up.text, "[0.00]\ngo [1.25]");
        let lines = parse_utterance(&up.text, true).unwrap();
        assert!(lines[0].words.is_empty());
        assert_eq!(lines[1].cost, Some(1.25));
    }

    #[test]
    fn registry_has_six_prompts() {
        let reg = builtin_task_prompts();
        assert_eq!(reg.iter().count(), 6);
        for tp in reg.iter() {
            assert!(tp.task.supports(tp.output_mode));
            assert!(!tp.prefix.is_empty() && !tp.infix.is_empty() && !tp.suffix.is_empty());
        }
    }

    #[test]
    fn render_joins_with_single_spaces() {
        let reg = builtin_task_prompts();
        let tp = reg
            .lookup(Task::Ddsd, InputMode::NBest, OutputMode::BinaryTarget)
            .unwrap();
        let up = serialize_utterance(&nbest(&[("yes", -6.0)]), true, 1).unwrap();
        let b = render(Some(tp), up, &AblationSet::new()).unwrap();
        assert_eq!(
            b.rendered,
            format!("{} {} {} yes [-6.0]", tp.prefix, tp.infix, tp.suffix)
        );
    }

    #[test]
    fn render_errors() {
        let reg = builtin_task_prompts();
        let tp = reg.lookup(Task::Ks, InputMode::NBest, OutputMode::Keyword).unwrap();
        let up = serialize_utterance(&nbest(&[("go", -1.0)]), true, 1).unwrap();
        let both: AblationSet = [Ablation::NoTaskPrompt, Ablation::GibberishTaskPrompt].into();
        assert_eq!(
            render(Some(tp), up.clone(), &both),
            Err(PromptError::InconsistentAblations)
        );
        let no_hc: AblationSet = [Ablation::NoHypothesisCost].into();
        assert_eq!(
            render(Some(tp), up.clone(), &no_hc),
            Err(PromptError::CostsPresent("u".into()))
        );
        assert_eq!(
            render(None, up.clone(), &AblationSet::new()),
            Err(PromptError::MissingTaskPrompt)
        );
        let bad = TaskPrompt {
            output_mode: OutputMode::BinaryTarget,
            ..tp.clone()
        };
        assert!(matches!(
            render(Some(&bad), up, &AblationSet::new()),
            Err(PromptError::IncompatibleModes { .. })
        ));
    }

    #[test]
    fn approx_counter_rounds_up() {
        assert_eq!(ApproxTokenCounter.count(""), 0);
        assert_eq!(ApproxTokenCounter.count("a"), 2);
        assert_eq!(ApproxTokenCounter.count("a b c d e f g h i j"), 13);
    }

    #[test]
    fn ablation_flags() {
        assert_eq!(Ablation::from_flag("no-tp"), Some(Ablation::NoTaskPrompt));
        assert_eq!(
            Ablation::from_flag("gibberish_task_prompt"),
            Some(Ablation::GibberishTaskPrompt)
        );
        assert_eq!(Ablation::from_flag("bogus"), None);
    }

    #[test]
    fn split_cost_requires_separator() {
        assert_eq!(split_cost("hive [-47.8]"), Some(("hive", -47.8)));
        assert_eq!(split_cost("hive[-47.8]"), None);
        assert_eq!(split_cost("hive"), None);
        assert_eq!(split_cost("a [b]"), None);
    }
}
