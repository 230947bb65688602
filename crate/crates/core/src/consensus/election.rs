use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::hash::NodeId;
use crate::ranking::{NodeStatus, RankingTable};
use crate::scp::CommitteeState;

/// Samples up to `count` distinct committee members without replacement, each
/// draw proportional to the composite rank score. Only members with positive
/// rank and a valid key are eligible. Fewer than `count` are returned when
/// fewer are eligible.
pub fn elect_producers<R: Rng + ?Sized>(
    table: &RankingTable,
    committee: &CommitteeState,
    count: usize,
    rng: &mut R,
) -> Result<Vec<NodeId>, ConsensusError> {
    let mut pool: Vec<(NodeId, f64)> = committee
        .members
        .iter()
        .filter_map(|id| table.get(id))
        .filter(|r| r.rank > 0.0 && r.key_valid && r.status != NodeStatus::Exited && r.score > 0.0)
        .map(|r| (r.node_id, r.score))
        .collect();
    if pool.is_empty() {
        return Err(ConsensusError::ElectionFailure);
    }
    let mut out = Vec::with_capacity(count.min(pool.len()));
    while out.len() < count && !pool.is_empty() {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut x = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (k, (_, w)) in pool.iter().enumerate() {
            if x < *w {
                pick = k;
                break;
            }
            x -= w;
        }
        out.push(pool.remove(pick).0);
    }
    Ok(out)
}

/// Honest and malicious nodes; `N_T` is their union.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePopulation {
    pub honest: BTreeSet<NodeId>,
    pub malicious: BTreeSet<NodeId>,
}

impl NodePopulation {
    pub fn new(honest: BTreeSet<NodeId>, malicious: BTreeSet<NodeId>) -> Result<Self, ConsensusError> {
        if let Some(both) = honest.intersection(&malicious).next() {
            return Err(ConsensusError::OverlappingPopulation(*both));
        }
        Ok(NodePopulation { honest, malicious })
    }

    pub fn total(&self) -> usize {
        self.honest.len() + self.malicious.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Liveness {
    pub theta: f64,
    pub live: bool,
}

/// `θ = |N_m| / |N_T|`; live iff `θ ≤ 1/3`.
pub fn liveness_ratio(pop: &NodePopulation) -> Result<Liveness, ConsensusError> {
    let n = pop.total();
    if n == 0 {
        return Err(ConsensusError::EmptyPopulation);
    }
    let m = pop.malicious.len();
    // 3m <= n is the exact form of m/n <= 1/3
    Ok(Liveness { theta: m as f64 / n as f64, live: 3 * m <= n })
}
