//! Evaluation: binary rates, ROC/EER/FPR@TPR/AUC and keyword reports.
//!
//! Decisions at a threshold are inclusive (`score >= threshold`). EER and
//! FPR at a target TPR interpolate linearly between adjacent ROC points.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyword::Keyword;
use crate::lattice::NBestList;
use crate::parse::{descriptive_fraction, ParsedPrediction, PredictionKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no {0} examples among the gold labels")]
    ClassAbsent(&'static str),
    #[error("score {score} for {utterance_id:?} is not a finite value in [0, 1]")]
    InvalidScore { utterance_id: String, score: f64 },
    #[error("score {score} for {utterance_id:?} is not 0 or 1")]
    NonBinaryScore { utterance_id: String, score: f64 },
    #[error("no gold label for {0:?}")]
    UnknownId(String),
    #[error("prediction for {0:?} is not a keyword label")]
    NotAKeyword(String),
    #[error("gold label {gold:?} for {utterance_id:?} does not fit a {kind:?} prediction")]
    InvalidGold {
        utterance_id: String,
        gold: String,
        kind: PredictionKind,
    },
    #[error("predictions mix {0:?} and {1:?} outputs")]
    MixedKinds(PredictionKind, PredictionKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub utterance_id: String,
    pub score: f64,
    pub gold: bool,
}

impl ScoredExample {
    pub fn new(utterance_id: impl Into<String>, score: f64, gold: bool) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            score,
            gold,
        }
    }
}

fn class_counts(examples: &[ScoredExample]) -> Result<(usize, usize), MetricsError> {
    for e in examples {
        if !e.score.is_finite() || !(0.0..=1.0).contains(&e.score) {
            return Err(MetricsError::InvalidScore {
                utterance_id: e.utterance_id.clone(),
                score: e.score,
            });
        }
    }
    let positives = examples.iter().filter(|e| e.gold).count();
    let negatives = examples.len() - positives;
    if positives == 0 {
        return Err(MetricsError::ClassAbsent("positive"));
    }
    if negatives == 0 {
        return Err(MetricsError::ClassAbsent("negative"));
    }
    Ok((positives, negatives))
}

/// `(tpr, fpr)` of a system emitting hard 0/1 decisions.
pub fn binary_rates(examples: &[ScoredExample]) -> Result<(f64, f64), MetricsError> {
    let (positives, negatives) = class_counts(examples)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for e in examples {
        if e.score != 0.0 && e.score != 1.0 {
            return Err(MetricsError::NonBinaryScore {
                utterance_id: e.utterance_id.clone(),
                score: e.score,
            });
        }
        if e.score == 1.0 {
            if e.gold {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp as f64 / positives as f64, fp as f64 / negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points sorted by descending threshold, from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
        }
        out
    }

    /// The point for a given decision threshold, if it is on the curve.
    pub fn at_threshold(&self, threshold: f64) -> Option<&RocPoint> {
        self.points.iter().find(|p| p.threshold == threshold)
    }
}

pub fn roc_curve(examples: &[ScoredExample]) -> Result<RocCurve, MetricsError> {
    let (positives, negatives) = class_counts(examples)?;
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].gold {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Where `fpr = 1 - tpr` on the piecewise-linear curve.
pub fn eer(curve: &RocCurve) -> f64 {
    let gap = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    let pts = &curve.points;
    for (i, p) in pts.iter().enumerate() {
        let d = gap(p);
        if d == 0.0 {
            return p.fpr;
        }
        if d > 0.0 {
            let Some(prev) = i.checked_sub(1).map(|j| &pts[j]) else {
                return p.fpr;
            };
            let d0 = gap(prev);
            let t = -d0 / (d - d0);
            return prev.fpr + t * (p.fpr - prev.fpr);
        }
    }
    // Only reachable for curves that never reach (1, 1).
    pts.last().map_or(1.0, |p| p.fpr)
}

/// Lowest false-positive rate reaching `target_tpr`, interpolating between
/// the bracketing curve points.
pub fn fpr_at_tpr(curve: &RocCurve, target_tpr: f64) -> f64 {
    let pts = &curve.points;
    for (i, p) in pts.iter().enumerate() {
        if p.tpr >= target_tpr {
            if p.tpr == target_tpr || i == 0 {
                return p.fpr;
            }
            let prev = &pts[i - 1];
            let t = (target_tpr - prev.tpr) / (p.tpr - prev.tpr);
            return prev.fpr + t * (p.fpr - prev.fpr);
        }
    }
    1.0
}

/// Lowest false-positive rate among actual operating points with
/// `tpr >= target_tpr`, without interpolation.
pub fn fpr_at_tpr_operating_point(curve: &RocCurve, target_tpr: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.tpr >= target_tpr)
        .map(|p| p.fpr)
        .fold(1.0, f64::min)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// Absent when the label was never predicted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    /// Absent when the label never occurs in the golds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub per_keyword: BTreeMap<String, PrecisionRecall>,
    pub total_accuracy: f64,
}

pub fn keyword_report(
    preds: &[ParsedPrediction],
    golds: &HashMap<String, Keyword>,
) -> Result<KeywordReport, MetricsError> {
    let mut predicted: HashMap<Keyword, usize> = HashMap::new();
    let mut actual: HashMap<Keyword, usize> = HashMap::new();
    let mut correct: HashMap<Keyword, usize> = HashMap::new();
    for p in preds {
        let k = p
            .keyword()
            .ok_or_else(|| MetricsError::NotAKeyword(p.utterance_id.clone()))?;
        let g = *golds
            .get(&p.utterance_id)
            .ok_or_else(|| MetricsError::UnknownId(p.utterance_id.clone()))?;
        *predicted.entry(k).or_default() += 1;
        *actual.entry(g).or_default() += 1;
        if k == g {
            *correct.entry(k).or_default() += 1;
        }
    }
    let ratio = |num: usize, den: Option<&usize>| den.filter(|&&d| d > 0).map(|&d| num as f64 / d as f64);
    let per_keyword = Keyword::ALL
        .into_iter()
        .map(|k| {
            let tp = correct.get(&k).copied().unwrap_or(0);
            (
                k.as_str().to_owned(),
                PrecisionRecall {
                    precision: ratio(tp, predicted.get(&k)),
                    recall: ratio(tp, actual.get(&k)),
                },
            )
        })
        .collect();
    let total_correct: usize = correct.values().sum();
    let total_accuracy = if preds.is_empty() {
        0.0
    } else {
        total_correct as f64 / preds.len() as f64
    };
    Ok(KeywordReport {
        per_keyword,
        total_accuracy,
    })
}

/// The trivial keyword spotter: the 1-best if it is exactly one command.
pub fn ks_baseline(nbest: &NBestList) -> Keyword {
    nbest
        .one_best()
        .and_then(|h| Keyword::from_words(&h.words))
        .unwrap_or(Keyword::Oov)
}

/// Aggregate evaluation output; fields not applicable to a run are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpr_at_tpr95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_keyword: Option<BTreeMap<String, PrecisionRecall>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_accuracy: Option<f64>,
    pub descriptive_fraction: f64,
}

/// Scores predictions of a single kind against string gold labels: `"1"` or
/// `"0"` for binary and scale predictions, a keyword label otherwise.
/// Binary runs report TPR/FPR; scale runs report EER, FPR@TPR95 and AUC
/// and also return the ROC curve; keyword runs report per-keyword
/// precision/recall and total accuracy.
pub fn evaluate(
    preds: &[ParsedPrediction],
    golds: &HashMap<String, String>,
) -> Result<(EvalReport, Option<RocCurve>), MetricsError> {
    let mut report = EvalReport {
        utterances: preds.len(),
        descriptive_fraction: descriptive_fraction(preds),
        ..EvalReport::default()
    };
    let Some(kind) = preds.first().map(ParsedPrediction::kind) else {
        return Ok((report, None));
    };
    if let Some(other) = preds.iter().map(ParsedPrediction::kind).find(|&k| k != kind) {
        return Err(MetricsError::MixedKinds(kind, other));
    }
    let gold_of = |p: &ParsedPrediction| {
        golds
            .get(&p.utterance_id)
            .ok_or_else(|| MetricsError::UnknownId(p.utterance_id.clone()))
    };
    let invalid = |p: &ParsedPrediction, gold: &str| MetricsError::InvalidGold {
        utterance_id: p.utterance_id.clone(),
        gold: gold.to_owned(),
        kind,
    };
    if kind == PredictionKind::Keyword {
        let mut keyword_golds = HashMap::new();
        for p in preds {
            let gold = gold_of(p)?;
            let k: Keyword = gold.parse().map_err(|_| invalid(p, gold))?;
            keyword_golds.insert(p.utterance_id.clone(), k);
        }
        let kr = keyword_report(preds, &keyword_golds)?;
        report.per_keyword = Some(kr.per_keyword);
        report.total_accuracy = Some(kr.total_accuracy);
        return Ok((report, None));
    }
    let mut examples = Vec::with_capacity(preds.len());
    for p in preds {
        let gold = match gold_of(p)?.as_str() {
            "1" => true,
            "0" => false,
            other => return Err(invalid(p, other)),
        };
        let score = p.score().expect("binary and scale predictions carry a score");
        examples.push(ScoredExample::new(p.utterance_id.clone(), score, gold));
    }
    if kind == PredictionKind::Binary {
        let (tpr, fpr) = binary_rates(&examples)?;
        report.tpr = Some(tpr);
        report.fpr = Some(fpr);
        return Ok((report, None));
    }
    let curve = roc_curve(&examples)?;
    report.eer = Some(eer(&curve));
    report.fpr_at_tpr95 = Some(fpr_at_tpr(&curve, 0.95));
    report.auc = Some(auc(&curve));
    Ok((report, Some(curve)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Hypothesis;
    use crate::parse::parse_keyword;

    fn ex(scores: &[(f64, bool)]) -> Vec<ScoredExample> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &(s, g))| ScoredExample::new(format!("u{i}"), s, g))
            .collect()
    }

    #[test]
    fn binary_rate_examples() {
        let perfect = ex(&[(1.0, true), (0.0, false)]);
        assert_eq!(binary_rates(&perfect), Ok((1.0, 0.0)));
        let all_pos = ex(&[(1.0, true), (1.0, false)]);
        assert_eq!(binary_rates(&all_pos), Ok((1.0, 1.0)));
        let mixed = ex(&[
            (1.0, true),
            (1.0, true),
            (1.0, true),
            (0.0, true),
            (1.0, false),
            (0.0, false),
            (0.0, false),
            (0.0, false),
        ]);
        assert_eq!(binary_rates(&mixed), Ok((0.75, 0.25)));
    }

    #[test]
    fn binary_rate_errors() {
        assert_eq!(
            binary_rates(&ex(&[(1.0, true)])),
            Err(MetricsError::ClassAbsent("negative"))
        );
        assert!(matches!(
            binary_rates(&ex(&[(0.5, true), (0.0, false)])),
            Err(MetricsError::NonBinaryScore { .. })
        ));
        assert!(matches!(
            roc_curve(&ex(&[(1.5, true), (0.0, false)])),
            Err(MetricsError::InvalidScore { .. })
        ));
    }

    #[test]
    fn separable_curve() {
        let c = roc_curve(&ex(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)])).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(eer(&c), 0.0);
        assert_eq!(fpr_at_tpr(&c, 0.95), 0.0);
        assert_eq!(auc(&c), 1.0);
    }

    #[test]
    fn constant_scores_give_two_points() {
        let c = roc_curve(&ex(&[(0.5, true), (0.5, false), (0.5, true)])).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        assert_eq!((c.points[1].fpr, c.points[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&c), 0.5);
        assert_eq!(eer(&c), 0.5);
        assert!((fpr_at_tpr(&c, 0.95) - 0.95).abs() < 1e-15);
        assert_eq!(fpr_at_tpr_operating_point(&c, 0.95), 1.0);
    }

    #[test]
    fn anti_classifier_eer_is_one() {
        let golds = [true, false, true, false, false];
        let data: Vec<(f64, bool)> = golds.iter().map(|&g| (if g { 0.0 } else { 1.0 }, g)).collect();
        let c = roc_curve(&ex(&data)).unwrap();
        assert_eq!(eer(&c), 1.0);
        assert_eq!(auc(&c), 0.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let c = roc_curve(&ex(&[(1.0, true), (0.0, false)])).unwrap();
        let csv = c.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("threshold,fpr,tpr"));
        assert_eq!(lines.next(), Some("inf,0,0"));
        assert_eq!(lines.next(), Some("1,0,1"));
        assert_eq!(lines.next(), Some("0,1,1"));
    }

    #[test]
    fn keyword_report_constant_oov() {
        let golds: HashMap<String, Keyword> = [
            ("a".to_string(), Keyword::Yes),
            ("b".to_string(), Keyword::Oov),
            ("c".to_string(), Keyword::Go),
        ]
        .into();
        let preds: Vec<_> = ["a", "b", "c"].iter().map(|id| parse_keyword(id, "OOV")).collect();
        let r = keyword_report(&preds, &golds).unwrap();
        assert_eq!(r.per_keyword["OOV"].recall, Some(1.0));
        assert_eq!(r.per_keyword["yes"].recall, Some(0.0));
        assert_eq!(r.per_keyword["yes"].precision, None);
        assert_eq!(r.per_keyword["up"].recall, None);
        assert!((r.total_accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_keyword.len(), 11);
    }

    #[test]
    fn keyword_report_errors() {
        let golds: HashMap<String, Keyword> = HashMap::new();
        assert_eq!(
            keyword_report(&[parse_keyword("zz", "go")], &golds),
            Err(MetricsError::UnknownId("zz".into()))
        );
        let golds: HashMap<String, Keyword> = [("b".to_string(), Keyword::Go)].into();
        assert_eq!(
            keyword_report(&[crate::parse::parse_binary("b", "1")], &golds),
            Err(MetricsError::NotAKeyword("b".into()))
        );
    }

    #[test]
    fn baseline_requires_exact_single_keyword() {
        let nb = |t: &str| NBestList {
            utterance_id: "u".into(),
            n_requested: 1,
            hypotheses: vec![Hypothesis::from_text(t, -1.0)],
        };
        assert_eq!(ks_baseline(&nb("go")), Keyword::Go);
        assert_eq!(ks_baseline(&nb("hive")), Keyword::Oov);
        assert_eq!(ks_baseline(&nb("turn left")), Keyword::Oov);
    }
}
