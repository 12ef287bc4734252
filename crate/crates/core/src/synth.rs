//! Seeded synthetic corpora: reference transcripts pushed through a noisy
//! word channel into sausage-shaped lattices.
//!
//! Each reference word becomes one slot holding the word itself plus its
//! configured confusions. An arc's total cost is `-ln p + sigma * z` with
//! `z ~ N(0, 1)`, split 70/30 between acoustic and language-model cost.
//! Noise is drawn for every configured candidate, including ones with zero
//! probability, so configs that differ only in probabilities consume the
//! random stream identically.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyword::Keyword;
use crate::lattice::{extract_nbest, Arc, Lattice, LatticeError, NBestList, NodeId};
use crate::prompt::Task;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("channel config has an empty vocabulary")]
    EmptyVocabulary,
    #[error("DDSD channel config needs both directed and undirected phrases")]
    MissingPhrases,
    #[error("invalid channel config: {0}")]
    Invalid(String),
    #[error("reference word sequence is empty")]
    EmptyReference,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub word: String,
    pub prob: f64,
}

fn confusions(items: &[(&str, f64)]) -> Vec<Confusion> {
    items
        .iter()
        .map(|&(word, prob)| Confusion {
            word: word.to_owned(),
            prob,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub seed: u64,
    pub task: Task,
    /// KS: the reference words, sampled uniformly. Both tasks: the filler
    /// words used for insertions.
    pub vocabulary: Vec<String>,
    /// DDSD reference phrases for the device-directed class.
    #[serde(default)]
    pub directed_phrases: Vec<String>,
    /// DDSD reference phrases for the human-directed class.
    #[serde(default)]
    pub undirected_phrases: Vec<String>,
    /// Substitution candidates per reference word. The word keeps the
    /// remaining probability mass.
    #[serde(default)]
    pub confusion: BTreeMap<String, Vec<Confusion>>,
    #[serde(default)]
    pub deletion_prob: f64,
    #[serde(default)]
    pub insertion_prob: f64,
    pub cost_noise_sigma: f64,
    pub n_paths: usize,
}

/// Words whose presence marks a synthetic DDSD utterance as device-directed.
pub const DDSD_CUE_WORDS: [&str; 6] = ["play", "call", "set", "text", "timer", "weather"];

const AM_SHARE: f64 = 0.7;

impl ChannelConfig {
    /// Keyword-spotting channel with 30% substitution mass per word.
    pub fn ks_default() -> Self {
        let rows: [(&str, &[(&str, f64)]); 20] = [
            ("yes", &[("yet", 0.15), ("yeah", 0.10), ("chess", 0.05)]),
            ("no", &[("know", 0.12), ("now", 0.10), ("go", 0.08)]),
            ("up", &[("app", 0.15), ("op", 0.07), ("off", 0.08)]),
            ("down", &[("dawn", 0.15), ("town", 0.10), ("done", 0.05)]),
            ("left", &[("lyft", 0.15), ("lift", 0.10), ("laugh", 0.05)]),
            ("right", &[("write", 0.15), ("light", 0.10), ("ride", 0.05)]),
            ("on", &[("own", 0.12), ("an", 0.10), ("off", 0.08)]),
            ("off", &[("of", 0.12), ("often", 0.10), ("up", 0.08)]),
            ("stop", &[("top", 0.15), ("step", 0.10), ("shop", 0.05)]),
            ("go", &[("call", 0.12), ("goal", 0.10), ("no", 0.08)]),
            ("five", &[("hive", 0.15), ("bye", 0.10), ("fine", 0.05)]),
            ("bed", &[("bad", 0.15), ("bet", 0.10), ("red", 0.05)]),
            ("bird", &[("word", 0.15), ("third", 0.10), ("burt", 0.05)]),
            ("cat", &[("cap", 0.15), ("at", 0.10), ("kit", 0.05)]),
            ("dog", &[("dug", 0.15), ("doc", 0.10), ("down", 0.05)]),
            ("house", &[("mouse", 0.15), ("how's", 0.10), ("horse", 0.05)]),
            ("tree", &[("three", 0.15), ("free", 0.10), ("true", 0.05)]),
            ("wow", &[("how", 0.15), ("vow", 0.10), ("now", 0.05)]),
            ("happy", &[("hippie", 0.15), ("heavy", 0.10), ("hobby", 0.05)]),
            ("marvin", &[("marvel", 0.15), ("martin", 0.10), ("marvins", 0.05)]),
        ];
        Self {
            seed: 42,
            task: Task::Ks,
            vocabulary: rows.iter().map(|(w, _)| (*w).to_owned()).collect(),
            directed_phrases: Vec::new(),
            undirected_phrases: Vec::new(),
            confusion: rows
                .iter()
                .map(|(w, alts)| ((*w).to_owned(), confusions(alts)))
                .collect(),
            deletion_prob: 0.0,
            insertion_prob: 0.0,
            cost_noise_sigma: 1.3,
            n_paths: 16,
        }
    }

    /// Device-directed detection channel. Cue words are easily lost to
    /// non-cue lookalikes; human-directed phrases rarely gain a cue.
    pub fn ddsd_default() -> Self {
        let rows: [(&str, &[(&str, f64)]); 8] = [
            ("play", &[("pray", 0.15), ("clay", 0.10), ("plate", 0.05)]),
            ("call", &[("fall", 0.15), ("tall", 0.10), ("cool", 0.05)]),
            ("set", &[("sat", 0.15), ("said", 0.10), ("sit", 0.05)]),
            ("text", &[("next", 0.15), ("test", 0.10), ("taxed", 0.05)]),
            ("timer", &[("time", 0.15), ("tamer", 0.10), ("tire", 0.05)]),
            ("weather", &[("whether", 0.15), ("feather", 0.10), ("leather", 0.05)]),
            ("fall", &[("call", 0.15), ("fault", 0.10), ("ball", 0.05)]),
            ("sat", &[("set", 0.15), ("that", 0.10), ("sad", 0.05)]),
        ];
        let phrases = |p: &[&str]| p.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>();
        Self {
            seed: 42,
            task: Task::Ddsd,
            vocabulary: phrases(&["the", "a", "uh", "so", "and"]),
            directed_phrases: phrases(&[
                "play music",
                "call mom",
                "set a timer",
                "text her",
                "what's the weather",
                "play it later",
            ]),
            undirected_phrases: phrases(&[
                "we ate tonight",
                "i fall asleep",
                "she sat down",
                "see you later",
                "how was dinner",
                "the kids are asleep",
            ]),
            confusion: rows
                .iter()
                .map(|(w, alts)| ((*w).to_owned(), confusions(alts)))
                .collect(),
            deletion_prob: 0.0,
            insertion_prob: 0.0,
            cost_noise_sigma: 1.0,
            n_paths: 16,
        }
    }

    /// A noiseless channel: no confusions and no cost noise.
    pub fn noiseless(mut self) -> Self {
        for row in self.confusion.values_mut() {
            for c in row.iter_mut() {
                c.prob = 0.0;
            }
        }
        self.cost_noise_sigma = 0.0;
        self.deletion_prob = 0.0;
        self.insertion_prob = 0.0;
        self
    }

    /// Rescales every confusion row to sum to `mass`, keeping proportions.
    pub fn with_substitution_mass(mut self, mass: f64) -> Self {
        for row in self.confusion.values_mut() {
            let total: f64 = row.iter().map(|c| c.prob).sum();
            if total > 0.0 {
                for c in row.iter_mut() {
                    c.prob *= mass / total;
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::Invalid(m));
        if self.vocabulary.is_empty() {
            return Err(SynthError::EmptyVocabulary);
        }
        if self.task == Task::Ddsd && (self.directed_phrases.is_empty() || self.undirected_phrases.is_empty()) {
            return Err(SynthError::MissingPhrases);
        }
        let bad_word = |w: &str| w.is_empty() || w.chars().any(char::is_whitespace);
        if let Some(w) = self.vocabulary.iter().find(|w| bad_word(w)) {
            return invalid(format!("vocabulary word {w:?} is empty or contains whitespace"));
        }
        for phrase in self.directed_phrases.iter().chain(&self.undirected_phrases) {
            if phrase.split_whitespace().next().is_none() {
                return invalid("empty reference phrase".into());
            }
        }
        for (word, row) in &self.confusion {
            let mut mass = 0.0;
            for c in row {
                if bad_word(&c.word) || c.word == *word {
                    return invalid(format!(
                        "confusion {:?} for {word:?} is not a distinct single word",
                        c.word
                    ));
                }
                if !(0.0..=1.0).contains(&c.prob) {
                    return invalid(format!("confusion probability {} for {word:?}", c.prob));
                }
                mass += c.prob;
            }
            if 1.0 - mass <= 0.0 {
                return invalid(format!(
                    "confusions of {word:?} leave no probability for the word itself"
                ));
            }
        }
        for (name, p) in [
            ("deletion_prob", self.deletion_prob),
            ("insertion_prob", self.insertion_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return invalid(format!("{name} = {p} is outside [0, 1)"));
            }
        }
        if !self.cost_noise_sigma.is_finite() || self.cost_noise_sigma < 0.0 {
            return invalid(format!("cost_noise_sigma = {}", self.cost_noise_sigma));
        }
        if self.n_paths == 0 {
            return invalid("n_paths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub utterance_id: String,
    /// `"1"`/`"0"` for DDSD, a keyword label for KS.
    pub gold: String,
    pub reference_words: Vec<String>,
    pub lattice: Lattice,
    pub nbest: NBestList,
}

struct SausageBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    sigma: f64,
    arcs: Vec<Arc>,
    node: NodeId,
}

impl SausageBuilder<'_> {
    /// Appends one slot of parallel arcs. Candidates with zero probability
    /// still consume a noise draw.
    fn slot(&mut self, candidates: &[(&str, f64)]) {
        let (from, to) = (self.node, self.node + 1);
        for &(word, prob) in candidates {
            let z: f64 = self.rng.sample(StandardNormal);
            if prob <= 0.0 {
                continue;
            }
            let cost = -prob.ln() + self.sigma * z;
            let am = AM_SHARE * cost;
            self.arcs.push(Arc::new(from, to, word, am, cost - am));
        }
        self.node = to;
    }
}

pub fn generate_corpus(config: &ChannelConfig, size: usize) -> Result<Vec<SyntheticUtterance>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prefix = config.task.as_str();
    let mut corpus = Vec::with_capacity(size);
    for i in 0..size {
        let (reference_words, gold): (Vec<String>, String) = match config.task {
            Task::Ks => {
                let word = &config.vocabulary[rng.random_range(0..config.vocabulary.len())];
                let gold = Keyword::command(word).unwrap_or(Keyword::Oov);
                (vec![word.clone()], gold.as_str().to_owned())
            }
            Task::Ddsd => {
                let directed = i % 2 == 0;
                let pool = if directed {
                    &config.directed_phrases
                } else {
                    &config.undirected_phrases
                };
                let phrase = &pool[rng.random_range(0..pool.len())];
                let words = phrase.split_whitespace().map(str::to_owned).collect();
                (words, if directed { "1" } else { "0" }.to_owned())
            }
        };

        let utterance_id = format!("{prefix}-{i:05}");
        let mut builder = SausageBuilder {
            rng: &mut rng,
            sigma: config.cost_noise_sigma,
            arcs: Vec::new(),
            node: 0,
        };
        let keep = 1.0 - config.deletion_prob;
        for word in &reference_words {
            let row = config.confusion.get(word).map(Vec::as_slice).unwrap_or(&[]);
            let own: f64 = 1.0 - row.iter().map(|c| c.prob).sum::<f64>();
            let mut candidates: Vec<(&str, f64)> = vec![(word.as_str(), own * keep)];
            candidates.extend(row.iter().map(|c| (c.word.as_str(), c.prob * keep)));
            if config.deletion_prob > 0.0 {
                candidates.push(("", config.deletion_prob));
            }
            builder.slot(&candidates);
            if config.insertion_prob > 0.0 {
                let filler = &config.vocabulary[builder.rng.random_range(0..config.vocabulary.len())];
                builder.slot(&[
                    ("", 1.0 - config.insertion_prob),
                    (filler.as_str(), config.insertion_prob),
                ]);
            }
        }
        let final_node = builder.node;
        let lattice = Lattice::new(utterance_id.clone(), 0, [final_node], builder.arcs)?;
        let nbest = extract_nbest(&lattice, config.n_paths);
        corpus.push(SyntheticUtterance {
            utterance_id,
            gold,
            reference_words,
            lattice,
            nbest,
        });
    }
    Ok(corpus)
}

/// Minimum number of substitutions, insertions and deletions.
pub fn edit_distance<S: PartialEq>(hypothesis: &[S], reference: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut curr = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[hypothesis.len()]
}

pub fn wer<S: PartialEq>(hypothesis: &[S], reference: &[S]) -> Result<f64, SynthError> {
    if reference.is_empty() {
        return Err(SynthError::EmptyReference);
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Pooled 1-best WER: total edits over total reference words.
pub fn corpus_wer(corpus: &[SyntheticUtterance]) -> f64 {
    let (edits, words) = corpus.iter().fold((0usize, 0usize), |(e, w), u| {
        let hyp = u.nbest.one_best().map(|h| h.words.as_slice()).unwrap_or(&[]);
        (e + edit_distance(hyp, &u.reference_words), w + u.reference_words.len())
    });
    if words == 0 {
        0.0
    } else {
        edits as f64 / words as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&["a", "b"], &["a", "b"]), Ok(0.0));
        assert_eq!(wer(&["hive"], &["five"]), Ok(1.0));
        assert_eq!(wer(&["a", "b", "c"], &["a", "x", "c", "d"]), Ok(0.5));
        assert_eq!(wer::<&str>(&[], &["a", "b"]), Ok(1.0));
        assert_eq!(wer(&["a", "b", "c"], &["a"]), Ok(2.0));
        assert_eq!(wer::<&str>(&["a"], &[]), Err(SynthError::EmptyReference));
    }

    #[test]
    fn empty_vocabulary_rejected() {
        let mut c = ChannelConfig::ks_default();
        c.vocabulary.clear();
        assert_eq!(generate_corpus(&c, 3), Err(SynthError::EmptyVocabulary));
    }

    #[test]
    fn invalid_rows_rejected() {
        let mut c = ChannelConfig::ks_default();
        c.confusion.get_mut("up").unwrap()[0].prob = 0.95;
        assert!(matches!(c.validate(), Err(SynthError::Invalid(_))));
        let mut c = ChannelConfig::ddsd_default();
        c.undirected_phrases.clear();
        assert_eq!(c.validate(), Err(SynthError::MissingPhrases));
        let mut c = ChannelConfig::ks_default();
        c.deletion_prob = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_channel_is_identity() {
        for config in [ChannelConfig::ks_default(), ChannelConfig::ddsd_default()] {
            let corpus = generate_corpus(&config.noiseless(), 200).unwrap();
            assert_eq!(corpus_wer(&corpus), 0.0);
            for u in &corpus {
                assert_eq!(u.nbest.hypotheses.len(), 1);
            }
        }
    }

    #[test]
    fn ddsd_labels_alternate() {
        let corpus = generate_corpus(&ChannelConfig::ddsd_default(), 201).unwrap();
        let directed = corpus.iter().filter(|u| u.gold == "1").count();
        assert_eq!(directed, 101);
    }

    #[test]
    fn deletion_and_insertion_keep_reference_path() {
        let mut c = ChannelConfig::ddsd_default();
        c.deletion_prob = 0.1;
        c.insertion_prob = 0.1;
        for u in generate_corpus(&c, 50).unwrap() {
            // Slots alternate word / insertion, so the reference path takes
            // the reference arc then the epsilon arc in each pair.
            let l = &u.lattice;
            assert_eq!(l.nodes().len(), 2 * u.reference_words.len() + 1);
            for (slot, word) in u.reference_words.iter().enumerate() {
                let from = 2 * slot as NodeId;
                assert!(l.out_arcs_of(from).iter().any(|&a| l.arcs()[a].word == *word));
                assert!(l.out_arcs_of(from + 1).iter().any(|&a| l.arcs()[a].is_epsilon()));
            }
        }
    }

    #[test]
    fn cost_split_is_seventy_thirty() {
        let u = &generate_corpus(&ChannelConfig::ks_default(), 1).unwrap()[0];
        for arc in u.lattice.arcs() {
            assert!((arc.am_cost - 0.7 * arc.cost()).abs() < 1e-12);
        }
    }
}
