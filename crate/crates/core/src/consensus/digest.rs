use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::hash::{double_sha256, Hash, NodeId};
use crate::ledger::{classify_layers, order_blocks, DagLedger};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDigest {
    pub node_id: NodeId,
    pub epoch: u64,
    /// Double SHA-256 over the confirmed block hashes in ledger order.
    pub ledger_hash: Hash,
}

impl StateDigest {
    pub fn of_confirmed(node_id: NodeId, epoch: u64, confirmed: &[Hash]) -> Self {
        let mut bytes = Vec::with_capacity(confirmed.len() * 32);
        for h in confirmed {
            bytes.extend_from_slice(h.as_bytes());
        }
        StateDigest { node_id, epoch, ledger_hash: double_sha256(&bytes) }
    }
}

/// The digest of a node's confirmed prefix.
pub fn state_digest(node_id: NodeId, epoch: u64, ledger: &DagLedger, k_conf: usize) -> StateDigest {
    let confirmed = if ledger.is_empty() {
        Vec::new()
    } else {
        let layers = classify_layers(ledger, k_conf);
        order_blocks(ledger, &layers).expect("non-empty ledger").confirmed
    };
    StateDigest::of_confirmed(node_id, epoch, &confirmed)
}

/// `max(⌊(1-θ)·n⌋ + 1, 5)`.
pub fn quorum_size(theta: f64, n: usize) -> usize {
    // the epsilon keeps (1 - 1/3)·12 from flooring to 7
    let honest = ((1.0 - theta) * n as f64 + 1e-9).floor() as usize;
    (honest + 1).max(5)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyVerdict {
    Consistent { ledger_hash: Hash, quorum: usize, dissenters: BTreeSet<NodeId> },
    Inconsistent { quorum: usize, groups: BTreeMap<Hash, BTreeSet<NodeId>> },
}

impl ConsistencyVerdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, ConsistencyVerdict::Consistent { .. })
    }

    /// Nodes whose digest is outside the agreeing quorum, or every node when
    /// no quorum exists.
    pub fn flagged(&self) -> BTreeSet<NodeId> {
        match self {
            ConsistencyVerdict::Consistent { dissenters, .. } => dissenters.clone(),
            ConsistencyVerdict::Inconsistent { groups, .. } => groups.values().flatten().copied().collect(),
        }
    }

    pub fn agreed_hash(&self) -> Option<Hash> {
        match self {
            ConsistencyVerdict::Consistent { ledger_hash, .. } => Some(*ledger_hash),
            ConsistencyVerdict::Inconsistent { .. } => None,
        }
    }

    pub fn label(&self) -> &'static str {
        if self.is_consistent() {
            "consistent"
        } else {
            "inconsistent"
        }
    }
}

/// Consistent iff at least `quorum_size(θ, n_total)` digests share one ledger
/// hash. Everyone outside the agreeing group is reported.
pub fn verify_consistency(
    digests: &[StateDigest],
    theta: f64,
    n_total: usize,
) -> Result<ConsistencyVerdict, ConsensusError> {
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<Hash, BTreeSet<NodeId>> = BTreeMap::new();
    for d in digests {
        if !seen.insert(d.node_id) {
            return Err(ConsensusError::DuplicateDigest(d.node_id));
        }
        groups.entry(d.ledger_hash).or_default().insert(d.node_id);
    }
    let quorum = quorum_size(theta, n_total);
    let best = groups.iter().max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0))).map(|(h, s)| (*h, s.len()));
    match best {
        Some((h, count)) if count >= quorum => {
            let dissenters = groups.iter().filter(|(g, _)| **g != h).flat_map(|(_, s)| s.iter().copied()).collect();
            Ok(ConsistencyVerdict::Consistent { ledger_hash: h, quorum, dissenters })
        }
        _ => Ok(ConsistencyVerdict::Inconsistent { quorum, groups }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: u8, h: u8) -> StateDigest {
        StateDigest { node_id: NodeId::from_byte(n), epoch: 0, ledger_hash: Hash([h; 32]) }
    }

    #[test]
    fn quorum_examples() {
        assert_eq!(quorum_size(1.0 / 3.0, 12), 9);
        assert_eq!(quorum_size(1.0 / 3.0, 6), 5);
        assert_eq!(quorum_size(0.0, 3), 5);
        assert_eq!(quorum_size(0.25, 8), 7);
    }

    #[test]
    fn identical_digests_consistent() {
        let ds: Vec<StateDigest> = (0..6).map(|n| d(n, 1)).collect();
        assert!(verify_consistency(&ds, 1.0 / 3.0, 6).unwrap().is_consistent());
    }

    #[test]
    fn one_dissenter_reported() {
        let mut ds: Vec<StateDigest> = (0..9).map(|n| d(n, 1)).collect();
        ds.push(d(9, 2));
        let v = verify_consistency(&ds, 1.0 / 3.0, 10).unwrap();
        assert!(v.is_consistent());
        assert_eq!(v.flagged(), [NodeId::from_byte(9)].into_iter().collect());
    }

    #[test]
    fn split_is_inconsistent_and_duplicates_error() {
        let ds: Vec<StateDigest> = (0..10).map(|n| d(n, n % 2)).collect();
        assert!(!verify_consistency(&ds, 1.0 / 3.0, 10).unwrap().is_consistent());
        let dup = vec![d(1, 1), d(1, 1)];
        assert_eq!(verify_consistency(&dup, 0.0, 2), Err(ConsensusError::DuplicateDigest(NodeId::from_byte(1))));
    }
}
