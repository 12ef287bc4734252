//! Word lattices and n-best extraction.
//!
//! A [`Lattice`] is an acyclic word graph whose arcs carry an acoustic and a
//! language-model cost. The cost of a path is the sum of `am_cost + lm_cost`
//! over its arcs, accumulated left to right from the start node; lower is
//! better. Extraction returns the `n` least-cost paths with a deterministic
//! tie-break (word sequence, then arc-index sequence).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("malformed lattice document: {0}")]
    Parse(String),
    #[error("lattice {utterance_id:?} has no final nodes")]
    EmptyFinals { utterance_id: String },
    #[error("lattice {utterance_id:?} has a cycle through arc {arc} ({from} -> {to})")]
    Cycle {
        utterance_id: String,
        arc: usize,
        from: NodeId,
        to: NodeId,
    },
    #[error("lattice {utterance_id:?}: node {node} is not reachable from start node {start}")]
    Unreachable {
        utterance_id: String,
        node: NodeId,
        start: NodeId,
    },
    #[error("lattice {utterance_id:?}: node {node} cannot reach any final node")]
    DeadEnd { utterance_id: String, node: NodeId },
    #[error("lattice {utterance_id:?}: arc {arc} has a non-finite cost")]
    NonFiniteCost { utterance_id: String, arc: usize },
    #[error("lattice {utterance_id:?}: arc {arc} word {word:?} contains whitespace")]
    InvalidWord {
        utterance_id: String,
        arc: usize,
        word: String,
    },
    #[error("path is not a start-to-final path of lattice {utterance_id:?}: {reason}")]
    InvalidPath { utterance_id: String, reason: String },
}

/// A word-labeled arc. An empty `word` marks an epsilon arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: NodeId,
    pub to: NodeId,
    pub word: String,
    pub am_cost: f64,
    pub lm_cost: f64,
}

impl Arc {
    pub fn new(from: NodeId, to: NodeId, word: impl Into<String>, am_cost: f64, lm_cost: f64) -> Self {
        Self {
            from,
            to,
            word: word.into(),
            am_cost,
            lm_cost,
        }
    }

    #[inline]
    pub fn cost(&self) -> f64 {
        self.am_cost + self.lm_cost
    }

    pub fn is_epsilon(&self) -> bool {
        self.word.is_empty()
    }
}

/// Interchange form of a lattice, one JSON object per file or per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDoc {
    pub utterance_id: String,
    pub start: NodeId,
    pub finals: Vec<NodeId>,
    pub arcs: Vec<Arc>,
}

/// A validated, immutable word lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    utterance_id: String,
    start: NodeId,
    finals: BTreeSet<NodeId>,
    arcs: Vec<Arc>,
    nodes: BTreeSet<NodeId>,
    // Outgoing arc indices per node, in document order.
    out_arcs: BTreeMap<NodeId, Vec<usize>>,
}

impl Lattice {
    pub fn new(
        utterance_id: impl Into<String>,
        start: NodeId,
        finals: impl IntoIterator<Item = NodeId>,
        arcs: Vec<Arc>,
    ) -> Result<Self, LatticeError> {
        let utterance_id = utterance_id.into();
        let finals: BTreeSet<NodeId> = finals.into_iter().collect();
        if finals.is_empty() {
            return Err(LatticeError::EmptyFinals { utterance_id });
        }
        for (i, arc) in arcs.iter().enumerate() {
            if !arc.am_cost.is_finite() || !arc.lm_cost.is_finite() {
                return Err(LatticeError::NonFiniteCost { utterance_id, arc: i });
            }
            if arc.word.chars().any(char::is_whitespace) {
                return Err(LatticeError::InvalidWord {
                    utterance_id,
                    arc: i,
                    word: arc.word.clone(),
                });
            }
        }

        let mut nodes: BTreeSet<NodeId> = finals.iter().copied().collect();
        nodes.insert(start);
        let mut out_arcs: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut in_arcs: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, arc) in arcs.iter().enumerate() {
            nodes.insert(arc.from);
            nodes.insert(arc.to);
            out_arcs.entry(arc.from).or_default().push(i);
            in_arcs.entry(arc.to).or_default().push(i);
        }

        let lattice = Self {
            utterance_id,
            start,
            finals,
            arcs,
            nodes,
            out_arcs,
        };
        lattice.check_acyclic()?;

        let forward = lattice.reach(std::iter::once(start), |n| {
            lattice.out_arcs_of(n).iter().map(|&a| lattice.arcs[a].to).collect()
        });
        if let Some(&node) = lattice.nodes.iter().find(|n| !forward.contains(n)) {
            return Err(LatticeError::Unreachable {
                utterance_id: lattice.utterance_id,
                node,
                start,
            });
        }
        let backward = lattice.reach(lattice.finals.iter().copied(), |n| {
            in_arcs
                .get(&n)
                .map(|v| v.iter().map(|&a| lattice.arcs[a].from).collect())
                .unwrap_or_default()
        });
        if let Some(&node) = lattice.nodes.iter().find(|n| !backward.contains(n)) {
            return Err(LatticeError::DeadEnd {
                utterance_id: lattice.utterance_id,
                node,
            });
        }
        Ok(lattice)
    }

    pub fn from_doc(doc: LatticeDoc) -> Result<Self, LatticeError> {
        Self::new(doc.utterance_id, doc.start, doc.finals, doc.arcs)
    }

    pub fn to_doc(&self) -> LatticeDoc {
        LatticeDoc {
            utterance_id: self.utterance_id.clone(),
            start: self.start,
            finals: self.finals.iter().copied().collect(),
            arcs: self.arcs.clone(),
        }
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn start(&self) -> NodeId {
        self.start
    }

    pub fn finals(&self) -> &BTreeSet<NodeId> {
        &self.finals
    }

    pub fn is_final(&self, node: NodeId) -> bool {
        self.finals.contains(&node)
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn out_arcs_of(&self, node: NodeId) -> &[usize] {
        self.out_arcs.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    fn reach(&self, seeds: impl Iterator<Item = NodeId>, next: impl Fn(NodeId) -> Vec<NodeId>) -> HashSet<NodeId> {
        let mut seen: HashSet<NodeId> = HashSet::new();
        let mut stack: Vec<NodeId> = seeds.collect();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(next(n));
            }
        }
        seen
    }

    /// Iterative three-colour DFS; reports the first back arc found.
    fn check_acyclic(&self) -> Result<(), LatticeError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Colour {
            White,
            Grey,
            Black,
        }
        let mut colour: BTreeMap<NodeId, Colour> = self.nodes.iter().map(|&n| (n, Colour::White)).collect();
        for &root in &self.nodes {
            if colour[&root] != Colour::White {
                continue;
            }
            // (node, next outgoing position)
            let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
            colour.insert(root, Colour::Grey);
            while let Some(top) = stack.last_mut() {
                let (node, pos) = *top;
                let outs = self.out_arcs_of(node);
                if pos == outs.len() {
                    colour.insert(node, Colour::Black);
                    stack.pop();
                    continue;
                }
                top.1 += 1;
                let arc_idx = outs[pos];
                let to = self.arcs[arc_idx].to;
                match colour[&to] {
                    Colour::Grey => {
                        return Err(LatticeError::Cycle {
                            utterance_id: self.utterance_id.clone(),
                            arc: arc_idx,
                            from: node,
                            to,
                        })
                    }
                    Colour::White => {
                        colour.insert(to, Colour::Grey);
                        stack.push((to, 0));
                    }
                    Colour::Black => {}
                }
            }
        }
        Ok(())
    }

    /// Nodes in topological order (Kahn's algorithm, smallest id first).
    pub fn topological_order(&self) -> Vec<NodeId> {
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for arc in &self.arcs {
            *indegree.get_mut(&arc.to).expect("node set covers arc endpoints") += 1;
        }
        let mut ready: BTreeSet<NodeId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for &a in self.out_arcs_of(n) {
                let d = indegree.get_mut(&self.arcs[a].to).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(self.arcs[a].to);
                }
            }
        }
        order
    }

    /// Minimum remaining cost from each node to any final node.
    fn cost_to_go(&self) -> BTreeMap<NodeId, f64> {
        let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
        for &n in self.topological_order().iter().rev() {
            let mut b = if self.is_final(n) { 0.0 } else { f64::INFINITY };
            for &a in self.out_arcs_of(n) {
                let arc = &self.arcs[a];
                b = b.min(arc.cost() + best[&arc.to]);
            }
            best.insert(n, b);
        }
        best
    }

    fn hypothesis_for(&self, arcs: Vec<usize>, cost: f64) -> Hypothesis {
        let words = arcs
            .iter()
            .map(|&a| &self.arcs[a])
            .filter(|a| !a.is_epsilon())
            .map(|a| a.word.clone())
            .collect();
        Hypothesis { words, cost, arcs }
    }
}

/// Parses one lattice document.
pub fn load_lattice(bytes: &[u8]) -> Result<Lattice, LatticeError> {
    let doc: LatticeDoc = serde_json::from_slice(bytes).map_err(|e| LatticeError::Parse(e.to_string()))?;
    Lattice::from_doc(doc)
}

/// Parses a `.jsonl` stream with one lattice per non-blank line.
pub fn load_lattices_jsonl(reader: impl BufRead) -> Vec<Result<Lattice, LatticeError>> {
    reader
        .lines()
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| LatticeError::Parse(format!("line {}: {e}", i + 1)))?;
            load_lattice(line.as_bytes()).map_err(|e| match e {
                LatticeError::Parse(m) => LatticeError::Parse(format!("line {}: {m}", i + 1)),
                other => other,
            })
        })
        .collect()
}

pub fn serialize_lattice(lattice: &Lattice) -> String {
    serde_json::to_string(&lattice.to_doc()).expect("lattice documents always serialize")
}

/// One lattice path reduced to its words and total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub words: Vec<String>,
    pub cost: f64,
    /// Arc indices of the originating path; empty when read back from a file.
    #[serde(skip)]
    pub arcs: Vec<usize>,
}

impl Hypothesis {
    pub fn new(words: Vec<String>, cost: f64) -> Self {
        Self {
            words,
            cost,
            arcs: Vec::new(),
        }
    }

    /// Convenience constructor splitting `text` on whitespace.
    pub fn from_text(text: &str, cost: f64) -> Self {
        Self::new(text.split_whitespace().map(str::to_owned).collect(), cost)
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utterance_id: String,
    pub n_requested: usize,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn one_best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// A copy holding only the first `k` hypotheses.
    pub fn truncated(&self, k: usize) -> NBestList {
        NBestList {
            utterance_id: self.utterance_id.clone(),
            n_requested: self.n_requested,
            hypotheses: self.hypotheses.iter().take(k).cloned().collect(),
        }
    }
}

/// Total order used to rank paths: cost, then words, then arc indices.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    a.cost
        .partial_cmp(&b.cost)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.words.cmp(&b.words))
        .then_with(|| a.arcs.cmp(&b.arcs))
}

/// Sum of `am_cost + lm_cost` over a start-to-final arc path.
pub fn hypothesis_cost(lattice: &Lattice, path: &[usize]) -> Result<f64, LatticeError> {
    let invalid = |reason: String| LatticeError::InvalidPath {
        utterance_id: lattice.utterance_id.clone(),
        reason,
    };
    let mut node = lattice.start;
    let mut cost = 0.0;
    for (pos, &a) in path.iter().enumerate() {
        let arc = lattice
            .arcs
            .get(a)
            .ok_or_else(|| invalid(format!("arc index {a} out of range")))?;
        if arc.from != node {
            return Err(invalid(format!(
                "arc {a} at position {pos} leaves node {} but the path is at node {node}",
                arc.from
            )));
        }
        cost += arc.cost();
        node = arc.to;
    }
    if !lattice.is_final(node) {
        return Err(invalid(format!("path ends at non-final node {node}")));
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NBestOptions {
    /// Keep only the least-cost path for each distinct word sequence.
    pub dedupe_words: bool,
}

pub fn one_best(lattice: &Lattice) -> Hypothesis {
    extract_nbest(lattice, 1)
        .hypotheses
        .into_iter()
        .next()
        .expect("a valid lattice has at least one path")
}

pub fn extract_nbest(lattice: &Lattice, n: usize) -> NBestList {
    extract_nbest_with(lattice, n, NBestOptions::default())
}

pub fn extract_nbest_with(lattice: &Lattice, n: usize, options: NBestOptions) -> NBestList {
    assert!(n >= 1, "n-best size must be positive");
    let hypotheses = if options.dedupe_words {
        // Widen the search until n distinct word sequences survive or the
        // lattice runs out of paths.
        let mut k = n;
        loop {
            let paths = least_cost_paths(lattice, k);
            let exhausted = paths.len() < k;
            let mut seen = HashSet::new();
            let distinct: Vec<Hypothesis> = paths
                .into_iter()
                .filter(|h| seen.insert(h.words.clone()))
                .take(n)
                .collect();
            if distinct.len() == n || exhausted {
                break distinct;
            }
            k *= 2;
        }
    } else {
        least_cost_paths(lattice, n)
    };
    NBestList {
        utterance_id: lattice.utterance_id.clone(),
        n_requested: n,
        hypotheses,
    }
}

struct Partial {
    // Priority: accumulated cost plus exact cost-to-go.
    estimate: f64,
    seq: u64,
    node: NodeId,
    cost: f64,
    arcs: Vec<usize>,
    complete: bool,
}

impl PartialEq for Partial {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Partial {}
impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Partial {
    // Reversed so the max-heap pops the smallest estimate first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .estimate
            .total_cmp(&self.estimate)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Best-first search with an exact cost-to-go heuristic.
///
/// Complete paths surface in cost order up to floating-point rounding of the
/// heuristic, so the search keeps popping until the frontier estimate clears
/// the n-th best complete cost by a slack, then sorts the collected paths
/// under [`rank_order`]. Path costs are always accumulated left to right.
fn least_cost_paths(lattice: &Lattice, n: usize) -> Vec<Hypothesis> {
    let to_go = lattice.cost_to_go();
    let magnitude: f64 = lattice.arcs.iter().map(|a| a.am_cost.abs() + a.lm_cost.abs()).sum();
    let slack = 1e-9 * (1.0 + magnitude);

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Partial {
        estimate: to_go[&lattice.start],
        seq,
        node: lattice.start,
        cost: 0.0,
        arcs: Vec::new(),
        complete: false,
    });

    let mut done: Vec<Hypothesis> = Vec::new();
    // Max-heap over the n smallest complete costs seen so far.
    let mut kept: BinaryHeap<OrdCost> = BinaryHeap::new();

    while let Some(item) = heap.pop() {
        if kept.len() == n && item.estimate > kept.peek().unwrap().0 + slack {
            break;
        }
        if item.complete {
            kept.push(OrdCost(item.cost));
            if kept.len() > n {
                kept.pop();
            }
            done.push(lattice.hypothesis_for(item.arcs, item.cost));
            continue;
        }
        if lattice.is_final(item.node) {
            seq += 1;
            heap.push(Partial {
                estimate: item.cost,
                seq,
                node: item.node,
                cost: item.cost,
                arcs: item.arcs.clone(),
                complete: true,
            });
        }
        for &a in lattice.out_arcs_of(item.node) {
            let arc = &lattice.arcs[a];
            let cost = item.cost + arc.cost();
            let mut arcs = Vec::with_capacity(item.arcs.len() + 1);
            arcs.extend_from_slice(&item.arcs);
            arcs.push(a);
            seq += 1;
            heap.push(Partial {
                estimate: cost + to_go[&arc.to],
                seq,
                node: arc.to,
                cost,
                arcs,
                complete: false,
            });
        }
    }

    done.sort_by(rank_order);
    done.truncate(n);
    done
}

#[derive(PartialEq)]
struct OrdCost(f64);
impl Eq for OrdCost {}
impl PartialOrd for OrdCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdCost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
