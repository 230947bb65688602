//! Node reputation: the endorsement-graph rank, the composite rank score and
//! the per-node ranking table updated by protocol events.

mod graph;
mod table;

pub use graph::{node_rank, EndorsementGraph, DEFAULT_ITERATIONS};
pub use table::{
    break_rank_ties, default_new_rank, init_ranks, rank_score, NodeRecord, NodeStatus, RankDeltas, RankEvent,
    RankParams, RankWeights, RankingTable, Referral, ReferralReason, TIE_EPSILON,
};

use crate::hash::NodeId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankingError {
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already present")]
    DuplicateNode(NodeId),
    #[error("initial rank factor {0} outside (0, 1)")]
    InvalidFactor(f64),
    #[error("iteration count must be at least 1")]
    InvalidIterations,
    #[error("rank weights must be non-negative and sum to 1")]
    InvalidWeights,
}
