//! Core pieces of an ASR n-best prompting pipeline for spoken intent
//! classification: lattices and n-best extraction, prompt rendering, parsing
//! of model output, evaluation metrics and a synthetic ASR channel.

pub mod keyword;
pub mod lattice;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod synth;

pub use keyword::Keyword;
pub use lattice::{
    extract_nbest, extract_nbest_with, hypothesis_cost, load_lattice, one_best, serialize_lattice, Arc, Hypothesis,
    Lattice, LatticeError, NBestList, NBestOptions,
};
pub use metrics::{auc, eer, fpr_at_tpr, roc_curve, EvalReport, RocCurve, ScoredExample};
pub use parse::{parse_binary, parse_keyword, parse_scale, probability_to_scale_label, ParsedPrediction};
pub use prompt::{
    builtin_task_prompts, enforce_budget, render, serialize_utterance, Ablation, AblationSet, InputMode, OutputMode,
    PromptBundle, Task, TaskPrompt, UtterancePrompt,
};
