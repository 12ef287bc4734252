//! Reference oracles for tests. Nothing here calls the algorithms it checks:
//! paths are enumerated exhaustively and ROC quantities are recounted from
//! scratch for every threshold.

use std::cmp::Ordering;

use nbest_core::lattice::{Arc, Lattice, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A start-to-final path as (words, cost, arc indices).
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub words: Vec<String>,
    pub cost: f64,
    pub arcs: Vec<usize>,
}

/// Every start-to-final path by depth-first search, unsorted. A path may end
/// at a final node that also has outgoing arcs.
pub fn enumerate_paths(lattice: &Lattice) -> Vec<OraclePath> {
    fn walk(lattice: &Lattice, node: NodeId, prefix: &mut Vec<usize>, out: &mut Vec<OraclePath>) {
        if lattice.finals().contains(&node) {
            let arcs = prefix.clone();
            let mut cost = 0.0;
            let mut words = Vec::new();
            for &a in &arcs {
                let arc = &lattice.arcs()[a];
                cost += arc.am_cost + arc.lm_cost;
                if !arc.word.is_empty() {
                    words.push(arc.word.clone());
                }
            }
            out.push(OraclePath { words, cost, arcs });
        }
        for (i, arc) in lattice.arcs().iter().enumerate() {
            if arc.from == node {
                prefix.push(i);
                walk(lattice, arc.to, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(lattice, lattice.start(), &mut Vec::new(), &mut out);
    out
}

/// Enumerate, sort by (cost, words, arcs), truncate.
pub fn nbest_oracle(lattice: &Lattice, n: usize) -> Vec<OraclePath> {
    let mut paths = enumerate_paths(lattice);
    paths.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.words.cmp(&b.words))
            .then_with(|| a.arcs.cmp(&b.arcs))
    });
    paths.truncate(n);
    paths
}

/// Random valid DAG lattice with at most `max_nodes` nodes and `max_arcs`
/// arcs. A chain through all nodes guarantees reachability; extra forward
/// arcs add alternatives. Costs come from a coarse grid half the time so
/// that equal-cost paths are common.
pub fn random_dag(rng: &mut impl Rng, id: &str, max_nodes: u32, max_arcs: usize) -> Lattice {
    const WORDS: [&str; 6] = ["a", "b", "go", "no", "up", ""];
    let nodes = rng.random_range(2..=max_nodes);
    let coarse = rng.random_bool(0.5);
    let cost = |rng: &mut dyn rand::RngCore| -> (f64, f64) {
        if coarse {
            let am = f64::from(rng.random_range(-4..=2i32)) * 0.5;
            let lm = f64::from(rng.random_range(-2..=1i32)) * 0.5;
            (am, lm)
        } else {
            (rng.random_range(-10.0..5.0), rng.random_range(-3.0..1.0))
        }
    };
    let mut arcs = Vec::new();
    for from in 0..nodes - 1 {
        let (am, lm) = cost(rng);
        arcs.push(Arc::new(
            from,
            from + 1,
            WORDS[rng.random_range(0..WORDS.len())],
            am,
            lm,
        ));
    }
    let extra = rng.random_range(0..=max_arcs.saturating_sub(arcs.len()));
    for _ in 0..extra {
        let from = rng.random_range(0..nodes - 1);
        let to = rng.random_range(from + 1..nodes);
        let (am, lm) = cost(rng);
        arcs.push(Arc::new(from, to, WORDS[rng.random_range(0..WORDS.len())], am, lm));
    }
    let mut finals = vec![nodes - 1];
    for node in 0..nodes - 1 {
        if rng.random_bool(0.15) {
            finals.push(node);
        }
    }
    Lattice::new(id, 0, finals, arcs).expect("generator only builds valid lattices")
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Six nodes, eight arcs, four paths with costs -8, -6, -5 and -3.5.
pub fn diamond_fixture() -> Lattice {
    Lattice::new(
        "diamond",
        0,
        [5],
        vec![
            Arc::new(0, 1, "turn", -2.0, -1.0),
            Arc::new(0, 2, "learn", -1.0, -0.5),
            Arc::new(1, 3, "on", -2.0, -1.0),
            Arc::new(1, 4, "off", -1.0, -1.0),
            Arc::new(2, 3, "on", -1.0, -0.5),
            Arc::new(2, 4, "of", -0.5, -0.5),
            Arc::new(3, 5, "lights", -1.0, -1.0),
            Arc::new(4, 5, "lights", -0.5, -0.5),
        ],
    )
    .unwrap()
}

/// Three paths with costs -10, -8 and -3.
pub fn three_path_fixture() -> Lattice {
    Lattice::new(
        "three",
        0,
        [3],
        vec![
            Arc::new(0, 1, "play", -4.0, -1.0),
            Arc::new(1, 3, "music", -4.0, -1.0),
            Arc::new(0, 2, "pray", -3.0, -1.0),
            Arc::new(2, 3, "music", -3.0, -1.0),
            Arc::new(0, 3, "plays", -2.0, -1.0),
        ],
    )
    .unwrap()
}

/// `(threshold, fpr, tpr)` from a fresh count at every distinct score plus
/// `+inf`, in descending threshold order.
pub fn roc_sweep(scores: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let positives = scores.iter().filter(|s| s.1).count() as f64;
    let negatives = scores.len() as f64 - positives;
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let tp = scores.iter().filter(|s| s.1 && s.0 >= t).count() as f64;
            let fp = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64;
            (t, fp / negatives, tp / positives)
        })
        .collect()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_mann_whitney(scores: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += match p.partial_cmp(n).unwrap() {
                Ordering::Greater => 1.0,
                Ordering::Equal => 0.5,
                Ordering::Less => 0.0,
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Solves `fpr = 1 - tpr` on each segment of the swept curve and returns the
/// smallest solution.
pub fn eer_crossing(points: &[(f64, f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for w in points.windows(2) {
        let (_, f0, t0) = w[0];
        let (_, f1, t1) = w[1];
        // fpr(l) + tpr(l) - 1 = 0 along l in [0, 1]
        let g0 = f0 + t0 - 1.0;
        let g1 = f1 + t1 - 1.0;
        if g0 == 0.0 {
            best = best.min(f0);
        }
        if g1 == 0.0 {
            best = best.min(f1);
        }
        if (g0 < 0.0 && g1 > 0.0) || (g0 > 0.0 && g1 < 0.0) {
            let l = g0 / (g0 - g1);
            best = best.min(f0 + l * (f1 - f0));
        }
    }
    best
}

/// `min over thresholds of max(fpr, fnr)`; an upper bound on the EER.
pub fn eer_minimax(points: &[(f64, f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&(_, f, t)| f.max(1.0 - t))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum fpr over every point of the piecewise-linear curve with
/// `tpr >= target`.
pub fn fpr_at_tpr_scan(points: &[(f64, f64, f64)], target: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &(_, f, t) in points {
        if t >= target {
            best = best.min(f);
        }
    }
    for w in points.windows(2) {
        let (_, f0, t0) = w[0];
        let (_, f1, t1) = w[1];
        if t0 < target && target < t1 {
            let l = (target - t0) / (t1 - t0);
            best = best.min(f0 + l * (f1 - f0));
        }
    }
    best
}

/// Random scored examples with both classes present. Scores are drawn from
/// a 0–100 integer grid half the time to exercise ties.
pub fn random_scores(rng: &mut impl Rng, min_len: usize, max_len: usize) -> Vec<(f64, bool)> {
    let len = rng.random_range(min_len..=max_len);
    let integer_scale = rng.random_bool(0.5);
    let shift: f64 = rng.random_range(0.0..0.4);
    let mut out: Vec<(f64, bool)> = (0..len)
        .map(|_| {
            let gold = rng.random_bool(0.5);
            let raw: f64 = rng.random_range(0.0..1.0) * (1.0 - shift) + if gold { shift } else { 0.0 };
            let score = if integer_scale {
                (raw * 100.0).round() / 100.0
            } else {
                raw
            };
            (score, gold)
        })
        .collect();
    out[0].1 = true;
    out[1].1 = false;
    out
}

#[cfg(feature = "http-stub")]
pub mod http_stub;
