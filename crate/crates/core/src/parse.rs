//! Reduces raw completions to task labels.
//!
//! All three parsers are total. Output that is not the requested terse form
//! is flagged `was_descriptive` and mapped by convention: binary answers
//! default to the device-directed class, scale answers to the first integer
//! in `[0, 100]` (else 1.0), keyword answers to OOV.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyword::Keyword;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("prediction record for {utterance_id:?}: {reason}")]
    BadRecord { utterance_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    Binary,
    Scale,
    Keyword,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionValue {
    Binary(u8),
    Scale(f64),
    Keyword(Keyword),
}

impl PredictionValue {
    pub fn kind(&self) -> PredictionKind {
        match self {
            PredictionValue::Binary(_) => PredictionKind::Binary,
            PredictionValue::Scale(_) => PredictionKind::Scale,
            PredictionValue::Keyword(_) => PredictionKind::Keyword,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPrediction {
    pub utterance_id: String,
    pub value: PredictionValue,
    pub was_descriptive: bool,
    pub raw_text: String,
}

impl ParsedPrediction {
    pub fn kind(&self) -> PredictionKind {
        self.value.kind()
    }

    /// Score in `[0, 1]` for binary and scale predictions.
    pub fn score(&self) -> Option<f64> {
        match self.value {
            PredictionValue::Binary(b) => Some(f64::from(b)),
            PredictionValue::Scale(s) => Some(s),
            PredictionValue::Keyword(_) => None,
        }
    }

    pub fn keyword(&self) -> Option<Keyword> {
        match self.value {
            PredictionValue::Keyword(k) => Some(k),
            _ => None,
        }
    }
}

/// Line format of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub utterance_id: String,
    pub kind: PredictionKind,
    pub label_or_score: serde_json::Value,
    pub was_descriptive: bool,
    pub raw_text: String,
}

impl From<&ParsedPrediction> for PredictionRecord {
    fn from(p: &ParsedPrediction) -> Self {
        let label_or_score = match p.value {
            PredictionValue::Binary(b) => serde_json::Value::from(b),
            PredictionValue::Scale(s) => serde_json::Value::from(s),
            PredictionValue::Keyword(k) => serde_json::Value::from(k.as_str()),
        };
        Self {
            utterance_id: p.utterance_id.clone(),
            kind: p.kind(),
            label_or_score,
            was_descriptive: p.was_descriptive,
            raw_text: p.raw_text.clone(),
        }
    }
}

impl TryFrom<PredictionRecord> for ParsedPrediction {
    type Error = ParseError;

    fn try_from(r: PredictionRecord) -> Result<Self, ParseError> {
        let bad = |reason: &str| ParseError::BadRecord {
            utterance_id: r.utterance_id.clone(),
            reason: reason.to_owned(),
        };
        let value = match r.kind {
            PredictionKind::Binary => match r.label_or_score.as_u64() {
                Some(b @ (0 | 1)) => PredictionValue::Binary(b as u8),
                _ => return Err(bad("binary label must be 0 or 1")),
            },
            PredictionKind::Scale => match r.label_or_score.as_f64() {
                Some(s) if (0.0..=1.0).contains(&s) => PredictionValue::Scale(s),
                _ => return Err(bad("scale score must be a number in [0, 1]")),
            },
            PredictionKind::Keyword => match r.label_or_score.as_str().map(str::parse::<Keyword>) {
                Some(Ok(k)) => PredictionValue::Keyword(k),
                _ => return Err(bad("keyword label outside the closed label set")),
            },
        };
        Ok(ParsedPrediction {
            utterance_id: r.utterance_id,
            value,
            was_descriptive: r.was_descriptive,
            raw_text: r.raw_text,
        })
    }
}

const QUOTES: &[char] = &['\'', '"', '`', '\u{2018}', '\u{2019}', '\u{201c}', '\u{201d}'];

fn trim_answer(raw: &str) -> &str {
    raw.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c))
}

pub fn parse_binary(utterance_id: &str, raw: &str) -> ParsedPrediction {
    let (label, was_descriptive) = match trim_answer(raw) {
        "1" => (1, false),
        "0" => (0, false),
        _ => (1, true),
    };
    ParsedPrediction {
        utterance_id: utterance_id.to_owned(),
        value: PredictionValue::Binary(label),
        was_descriptive,
        raw_text: raw.to_owned(),
    }
}

/// A run of ASCII digits read as an integer in `[0, 100]`.
fn integer_in_range(digits: &str) -> Option<u32> {
    let significant = digits.trim_start_matches('0');
    if significant.is_empty() {
        return Some(0);
    }
    // Longer runs are out of range anyway; avoids overflow on huge numbers.
    if significant.len() > 3 {
        return None;
    }
    significant.parse::<u32>().ok().filter(|&k| k <= 100)
}

pub fn parse_scale(utterance_id: &str, raw: &str) -> ParsedPrediction {
    let trimmed = trim_answer(raw);
    let exact = if !trimmed.is_empty() && trimmed.bytes().all(|b| b.is_ascii_digit()) {
        integer_in_range(trimmed)
    } else {
        None
    };
    let (score, was_descriptive) = match exact {
        Some(k) => (f64::from(k) / 100.0, false),
        None => {
            let first = raw
                .split(|c: char| !c.is_ascii_digit())
                .filter(|run| !run.is_empty())
                .find_map(integer_in_range);
            (first.map_or(1.0, |k| f64::from(k) / 100.0), true)
        }
    };
    ParsedPrediction {
        utterance_id: utterance_id.to_owned(),
        value: PredictionValue::Scale(score),
        was_descriptive,
        raw_text: raw.to_owned(),
    }
}

pub fn parse_keyword(utterance_id: &str, raw: &str) -> ParsedPrediction {
    let word = raw
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || QUOTES.contains(&c))
        .to_lowercase();
    let (keyword, was_descriptive) = match Keyword::command(&word) {
        Some(k) => (k, false),
        None if word == "oov" => (Keyword::Oov, false),
        None => (Keyword::Oov, true),
    };
    ParsedPrediction {
        utterance_id: utterance_id.to_owned(),
        value: PredictionValue::Keyword(keyword),
        was_descriptive,
        raw_text: raw.to_owned(),
    }
}

/// `round(100 * p)` with ties to even.
pub fn probability_to_scale_label(p: f64) -> Result<u8, ParseError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ParseError::ProbabilityOutOfRange(p));
    }
    Ok((100.0 * p).round_ties_even() as u8)
}

pub fn descriptive_fraction(preds: &[ParsedPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.was_descriptive).count() as f64 / preds.len() as f64
}
