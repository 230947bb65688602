use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::RankingError;
use crate::hash::NodeId;

pub const DEFAULT_ITERATIONS: usize = 50;

/// Who endorses whom. `a` endorses `b` when a block produced by `a` confirms a
/// block produced by `b`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementGraph {
    edges: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl EndorsementGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.edges.entry(n).or_default();
    }

    /// Adds `from → to`. Self-endorsement is ignored. Returns true if the edge
    /// is new.
    pub fn endorse(&mut self, from: NodeId, to: NodeId) -> bool {
        self.add_node(to);
        let out = self.edges.entry(from).or_default();
        from != to && out.insert(to)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.edges.keys()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn outbound(&self, n: &NodeId) -> Option<&BTreeSet<NodeId>> {
        self.edges.get(n)
    }

    pub fn out_degree(&self, n: &NodeId) -> usize {
        self.edges.get(n).map_or(0, |s| s.len())
    }

    pub fn edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.edges.iter().flat_map(|(a, outs)| outs.iter().map(move |b| (a, b)))
    }
}

/// Iterated link rank. Each sweep sets
/// `N_R(A) = i/(1-i) * Σ N_R(B)/OL_B` over the endorsers `B` of `A`, gives nodes
/// without endorsers the floor `1/(10N)` in place of the sum, and rescales the
/// vector to unit L1 norm. The `i/(1-i)` factor is kept for fidelity even
/// though normalization removes it.
pub fn node_rank(graph: &EndorsementGraph, i: f64, iterations: usize) -> Result<BTreeMap<NodeId, f64>, RankingError> {
    if !(i > 0.0 && i < 1.0) {
        return Err(RankingError::InvalidFactor(i));
    }
    if iterations == 0 {
        return Err(RankingError::InvalidIterations);
    }
    let ids: Vec<NodeId> = graph.nodes().copied().collect();
    let n = ids.len();
    if n == 0 {
        return Ok(BTreeMap::new());
    }
    let pos: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    // inbound[a] = list of (b, 1/OL_b)
    let mut inbound: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (a, b) in graph.edges() {
        let w = 1.0 / graph.out_degree(a) as f64;
        inbound[pos[b]].push((pos[a], w));
    }
    let floor = 1.0 / (10.0 * n as f64);
    let scale = i / (1.0 - i);

    let mut r = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..iterations {
        for (a, ins) in inbound.iter().enumerate() {
            let s = if ins.is_empty() { floor } else { ins.iter().map(|&(b, w)| r[b] * w).sum() };
            next[a] = scale * s;
        }
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
        std::mem::swap(&mut r, &mut next);
    }
    Ok(ids.into_iter().zip(r).collect())
}
