use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{node_rank, EndorsementGraph, RankingError, DEFAULT_ITERATIONS};
use crate::hash::NodeId;

pub const TIE_EPSILON: f64 = 1e-9;

/// Composite score weights: `c1` for key authentication, `c2` for resources
/// occupied, `c3` for current rank.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights { c1: 0.3, c2: 0.2, c3: 0.5 }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<(), RankingError> {
        let ok = [self.c1, self.c2, self.c3].iter().all(|c| c.is_finite() && *c >= 0.0)
            && (self.c1 + self.c2 + self.c3 - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(RankingError::InvalidWeights)
        }
    }
}

/// Rank increments for rewards and the decrement for misbehavior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankDeltas {
    pub block_confirmed: f64,
    pub tx_verified: f64,
    pub misbehavior: f64,
}

impl Default for RankDeltas {
    fn default() -> Self {
        RankDeltas { block_confirmed: 0.05, tx_verified: 0.01, misbehavior: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankParams {
    pub weights: RankWeights,
    pub deltas: RankDeltas,
    /// The `i` of the link-rank recursion.
    pub init_factor: f64,
    pub iterations: usize,
    /// Bytes a node can process per epoch; `U = min(1, bytes / capacity)`.
    pub capacity_bytes: u64,
}

impl Default for RankParams {
    fn default() -> Self {
        RankParams {
            weights: RankWeights::default(),
            deltas: RankDeltas::default(),
            init_factor: 0.85,
            iterations: DEFAULT_ITERATIONS,
            capacity_bytes: 1 << 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Waiting,
    Consensus,
    Exited,
}

impl NodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeStatus::Waiting => "waiting",
            NodeStatus::Consensus => "consensus",
            NodeStatus::Exited => "exited",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    #[serde(with = "crate::ledger::hex_bytes")]
    pub public_key: Vec<u8>,
    /// `N_R`.
    pub rank: f64,
    pub join_time: u64,
    pub participations: u64,
    pub processed_tx_sizes: Vec<u64>,
    pub status: NodeStatus,
    pub outbound_links: usize,
    pub misbehavior_count: u64,
    pub key_valid: bool,
    pub epoch_bytes: u64,
    /// Latest link rank from the endorsement graph.
    pub link_rank: f64,
    /// Composite score `R_k`.
    pub score: f64,
}

impl NodeRecord {
    fn new(node_id: NodeId, public_key: Vec<u8>, rank: f64, join_time: u64, status: NodeStatus) -> Self {
        NodeRecord {
            node_id,
            public_key,
            rank,
            join_time,
            participations: 0,
            processed_tx_sizes: Vec::new(),
            status,
            outbound_links: 0,
            misbehavior_count: 0,
            key_valid: true,
            epoch_bytes: 0,
            link_rank: 0.0,
            score: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RankEvent {
    NewNode { public_key: Vec<u8>, join_time: u64 },
    BlockConfirmed,
    TxVerified { bytes: u64 },
    Misbehavior,
    KeyInvalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferralReason {
    NegativeRank,
    KeyInvalid,
}

/// A request for the membership protocol to handle a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Referral {
    pub node: NodeId,
    pub reason: ReferralReason,
}

/// `c1·P + c2·U + c3·R`.
pub fn rank_score(p: f64, u: f64, r: f64, w: &RankWeights) -> f64 {
    w.c1 * p + w.c2 * u + w.c3 * r
}

/// Uniform draw strictly inside (0.1, 0.5).
pub fn default_new_rank<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v = rng.gen_range(0.1..0.5);
        if v > 0.1 {
            return v;
        }
    }
}

/// The local metadata pool: one record per known node plus the ranking list,
/// ordered by score descending then node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    records: BTreeMap<NodeId, NodeRecord>,
    ranking_list: Vec<NodeId>,
    pub params: RankParams,
}

/// Every node starts at rank `1/N` in the committee.
pub fn init_ranks(nodes: &BTreeSet<NodeId>, params: RankParams) -> Result<RankingTable, RankingError> {
    if nodes.is_empty() {
        return Err(RankingError::EmptyNodeSet);
    }
    RankingTable::with_rank(nodes, 1.0 / nodes.len() as f64, params)
}

impl RankingTable {
    pub fn empty(params: RankParams) -> Result<Self, RankingError> {
        params.weights.validate()?;
        Ok(RankingTable { records: BTreeMap::new(), ranking_list: Vec::new(), params })
    }

    /// Committee nodes with a fixed starting rank.
    pub fn with_rank(nodes: &BTreeSet<NodeId>, rank: f64, params: RankParams) -> Result<Self, RankingError> {
        if nodes.is_empty() {
            return Err(RankingError::EmptyNodeSet);
        }
        let mut t = Self::empty(params)?;
        for id in nodes {
            let rec = NodeRecord::new(*id, id.as_bytes().to_vec(), rank, 0, NodeStatus::Consensus);
            t.records.insert(*id, rec);
        }
        t.refresh();
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.records.contains_key(id)
    }

    pub fn rank(&self, id: &NodeId) -> Option<f64> {
        self.records.get(id).map(|r| r.rank)
    }

    pub fn score(&self, id: &NodeId) -> Option<f64> {
        self.records.get(id).map(|r| r.score)
    }

    pub fn ranking_list(&self) -> &[NodeId] {
        &self.ranking_list
    }

    /// Records in ranking-list order.
    pub fn records(&self) -> impl Iterator<Item = &NodeRecord> {
        self.ranking_list.iter().map(|id| &self.records[id])
    }

    fn record_mut(&mut self, id: &NodeId) -> Result<&mut NodeRecord, RankingError> {
        self.records.get_mut(id).ok_or(RankingError::UnknownNode(*id))
    }

    pub fn set_status(&mut self, id: &NodeId, status: NodeStatus) -> Result<(), RankingError> {
        self.record_mut(id)?.status = status;
        Ok(())
    }

    /// Adds a node with a known rank (for scenarios that fix starting ranks).
    pub fn insert_with_rank(
        &mut self,
        id: NodeId,
        public_key: Vec<u8>,
        rank: f64,
        join_time: u64,
        status: NodeStatus,
    ) -> Result<(), RankingError> {
        if self.records.contains_key(&id) {
            return Err(RankingError::DuplicateNode(id));
        }
        self.records.insert(id, NodeRecord::new(id, public_key, rank, join_time, status));
        self.refresh();
        Ok(())
    }

    /// Applies one protocol event and returns a referral when the node must be
    /// handed to the membership protocol.
    pub fn update_ranks<R: Rng + ?Sized>(
        &mut self,
        node: NodeId,
        event: RankEvent,
        rng: &mut R,
    ) -> Result<Option<Referral>, RankingError> {
        let d = self.params.deltas;
        let referral = match event {
            RankEvent::NewNode { public_key, join_time } => {
                if self.records.contains_key(&node) {
                    return Err(RankingError::DuplicateNode(node));
                }
                let rank = default_new_rank(rng);
                self.records.insert(node, NodeRecord::new(node, public_key, rank, join_time, NodeStatus::Waiting));
                None
            }
            RankEvent::KeyInvalid => {
                self.record_mut(&node)?.key_valid = false;
                Some(ReferralReason::KeyInvalid)
            }
            RankEvent::BlockConfirmed => {
                let r = self.record_mut(&node)?;
                r.rank += d.block_confirmed;
                r.participations += 1;
                (r.rank < 0.0).then_some(ReferralReason::NegativeRank)
            }
            RankEvent::TxVerified { bytes } => {
                let r = self.record_mut(&node)?;
                r.rank += d.tx_verified;
                r.processed_tx_sizes.push(bytes);
                r.epoch_bytes += bytes;
                (r.rank < 0.0).then_some(ReferralReason::NegativeRank)
            }
            RankEvent::Misbehavior => {
                let r = self.record_mut(&node)?;
                r.rank -= d.misbehavior;
                r.misbehavior_count += 1;
                (r.rank < 0.0).then_some(ReferralReason::NegativeRank)
            }
        };
        self.refresh();
        Ok(referral.map(|reason| Referral { node, reason }))
    }

    /// Starts a new accounting epoch for the resources-occupied score.
    pub fn begin_epoch(&mut self) {
        for r in self.records.values_mut() {
            r.epoch_bytes = 0;
        }
        self.refresh();
    }

    /// Stores link ranks and outbound-link counts from the endorsement graph.
    pub fn apply_link_ranks(&mut self, graph: &EndorsementGraph) -> Result<(), RankingError> {
        let lr = node_rank(graph, self.params.init_factor, self.params.iterations)?;
        for r in self.records.values_mut() {
            r.link_rank = lr.get(&r.node_id).copied().unwrap_or(0.0);
            r.outbound_links = graph.out_degree(&r.node_id);
        }
        Ok(())
    }

    /// Recomputes every composite score and re-sorts the ranking list.
    fn refresh(&mut self) {
        let w = self.params.weights;
        let cap = self.params.capacity_bytes.max(1) as f64;
        for r in self.records.values_mut() {
            let p = if r.key_valid { 1.0 } else { 0.0 };
            let u = (r.epoch_bytes as f64 / cap).min(1.0);
            r.score = rank_score(p, u, r.rank, &w);
        }
        let mut list: Vec<NodeId> = self.records.keys().copied().collect();
        list.sort_by(|a, b| {
            let (sa, sb) = (self.records[a].score, self.records[b].score);
            sb.total_cmp(&sa).then(a.cmp(b))
        });
        self.ranking_list = list;
    }

    /// One line per record in ranking-list order:
    /// `node_id,rank,status,participations,misbehavior_count`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            writeln!(
                out,
                "{},{:.16e},{},{},{}",
                r.node_id.to_hex(),
                r.rank,
                r.status.as_str(),
                r.participations,
                r.misbehavior_count
            )
            .expect("write to string");
        }
        out
    }
}

/// Separates bitwise-equal ranks: within each tied group, the node at position
/// `p` in node-id order gets `rank + ε·p`. Repeats until all ranks differ.
pub fn break_rank_ties(table: &RankingTable) -> RankingTable {
    let mut t = table.clone();
    loop {
        let mut groups: BTreeMap<u64, Vec<NodeId>> = BTreeMap::new();
        for r in t.records.values() {
            groups.entry(r.rank.to_bits()).or_default().push(r.node_id);
        }
        let mut changed = false;
        for ids in groups.values().filter(|g| g.len() > 1) {
            // BTreeMap iteration already gives node-id order
            for (p, id) in ids.iter().enumerate().skip(1) {
                t.records.get_mut(id).expect("known").rank += TIE_EPSILON * p as f64;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    t.refresh();
    t
}
