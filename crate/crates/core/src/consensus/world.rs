use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{
    elect_producers, liveness_ratio, state_digest, verify_consistency, ConsensusError, ConsistencyVerdict, EpochConfig,
    NodePopulation, StateDigest,
};
use crate::crypto::{KeyPair, VerifyCache};
use crate::experiment::throughput;
use crate::hash::{double_sha256, Hash, NodeId};
use crate::ledger::{
    classify_layers, detect_double_spend, effective_transactions, order_blocks, select_tips, Block, DagLedger,
    Insertion, LedgerError, Mempool, Transaction,
};
use crate::ranking::{EndorsementGraph, NodeStatus, RankEvent, RankingTable};
use crate::rng::{stream, substream, SimRng};
use crate::scp::{eviction_ticket, CommitteeState, PrepareMessage};
use crate::simnet::{
    apply_adversary, broadcast, corrupt_signature, run_until, secs_to_us, AdversaryProfile, Audience, Behavior,
    Destination, EventKind, EventQueue, Handler, Payload, SimEvent, SimTime, SlotPlan, TraceRecord, MICROS,
};

/// Everything needed to build a [`World`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub node_count: usize,
    pub epoch: EpochConfig,
    /// Node index to adversarial behaviors.
    pub adversaries: BTreeMap<usize, BTreeSet<Behavior>>,
    /// Fault tolerance `f`; defaults to [`default_f`].
    pub f: Option<usize>,
    /// Starting rank for every node; `1/N` when absent.
    pub initial_rank: Option<f64>,
    /// Per-node capability in (0, 1]: the chance of producing in a slot and
    /// the fraction of the block size used.
    pub capabilities: Option<Vec<f64>>,
    /// Client transactions submitted per epoch.
    pub tx_load: usize,
    pub payload_size: u32,
}

impl WorldSpec {
    pub fn new(seed: u64, node_count: usize) -> Self {
        WorldSpec {
            seed,
            node_count,
            epoch: EpochConfig::default(),
            adversaries: BTreeMap::new(),
            f: None,
            initial_rank: None,
            capabilities: None,
            tx_load: 200,
            payload_size: 250,
        }
    }
}

/// The largest `f` that still leaves `3f+1` members after every node beyond
/// the tolerated third has been evicted.
pub fn default_f(n: usize) -> usize {
    n.saturating_sub(n / 3).saturating_sub(1) / 3
}

#[derive(Clone, Debug)]
pub enum Message {
    Block { block: Arc<Block>, signature: Vec<u8> },
    Tx(Transaction),
    Digest(StateDigest),
    Slot { slot: u64, slot_start: u64 },
    Scp(Box<PrepareMessage>),
}

impl Payload for Message {
    fn digest(&self) -> Hash {
        match self {
            Message::Block { block, .. } => block.block_hash,
            Message::Tx(tx) => tx.tx_id,
            Message::Digest(d) => {
                let mut b = d.node_id.as_bytes().to_vec();
                b.extend_from_slice(&d.epoch.to_le_bytes());
                b.extend_from_slice(d.ledger_hash.as_bytes());
                double_sha256(&b)
            }
            Message::Slot { slot, slot_start } => {
                let mut b = slot.to_le_bytes().to_vec();
                b.extend_from_slice(&slot_start.to_le_bytes());
                double_sha256(&b)
            }
            Message::Scp(m) => double_sha256(&m.ticket.bytes()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Election {
    pub producers: Vec<NodeId>,
    /// The elected producer with the highest score.
    pub leader: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Cumulative count of confirmed blocks in the reference view.
    pub confirmed_blocks: usize,
    /// Transactions newly confirmed this epoch.
    pub confirmed_txs: usize,
    pub tps: f64,
    /// Block time over transaction count, seconds per transaction.
    pub raw_ratio: Option<f64>,
    pub mean_latency: Option<f64>,
    pub committee_size: usize,
    pub theta: f64,
    pub consistency: String,
    /// Nodes outside the agreeing digest group; everyone when there is none.
    pub dissenters: Vec<NodeId>,
    pub leader: NodeId,
    pub leader_capability: f64,
    pub producers: Vec<NodeId>,
    pub timeouts: usize,
    pub conflicts: usize,
    pub equivocations: usize,
    pub evicted: Vec<NodeId>,
    pub rejected_messages: u64,
}

struct SimNode {
    keys: KeyPair,
    ledger: DagLedger,
    /// Acceptance time of each block, aligned with ledger acceptance order.
    accept_time: Vec<SimTime>,
    mempool: Mempool,
    capability: f64,
    requested: HashSet<Hash>,
}

struct Rngs {
    election: SimRng,
    delays: SimRng,
    adversary: SimRng,
    txgen: SimRng,
    production: SimRng,
    scp: SimRng,
}

/// Transient per-epoch bookkeeping.
#[derive(Default)]
struct EpochState {
    expected: BTreeSet<(NodeId, u64)>,
    slot_acceptance: HashMap<(NodeId, u64), BTreeSet<usize>>,
    timeouts: Vec<NodeId>,
    digests: Vec<StateDigest>,
}

pub struct World {
    pub config: EpochConfig,
    seed: u64,
    nodes: Vec<SimNode>,
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    table: RankingTable,
    committee: CommitteeState,
    population: NodePopulation,
    adversaries: BTreeMap<NodeId, AdversaryProfile>,
    queue: EventQueue<Message>,
    trace: Vec<TraceRecord>,
    rngs: Rngs,
    cache: VerifyCache,
    valid_blocks: HashSet<Hash>,
    graph: EndorsementGraph,
    epoch: u64,
    cur: EpochState,
    tx_load: usize,
    payload_size: u32,
    carry: Vec<Transaction>,
    confirmed: HashSet<Hash>,
    confirmed_count: usize,
    entry_time: HashMap<Hash, SimTime>,
    counted_txs: HashSet<Hash>,
    /// input -> counted tx spending it; settled spends never change hands
    settled_inputs: HashMap<Hash, Hash>,
    submitted: Vec<Hash>,
    seen_conflicts: BTreeSet<(Hash, Hash)>,
    seen_equivocations: BTreeSet<(NodeId, u64)>,
    flagged: HashSet<Hash>,
    latencies: Vec<f64>,
    metrics: Vec<EpochMetrics>,
    rejected: u64,
    digest_corruption: BTreeMap<u64, usize>,
    input_counter: u64,
}

impl World {
    pub fn new(spec: &WorldSpec) -> Result<World, ConsensusError> {
        spec.epoch.validate()?;
        let n = spec.node_count;
        if n < 4 {
            return Err(ConsensusError::InvalidConfig("node_count must be at least 4".into()));
        }
        if let Some(i) = spec.adversaries.keys().find(|i| **i >= n) {
            return Err(ConsensusError::InvalidConfig(format!("adversary index {i} out of range")));
        }
        let caps = match &spec.capabilities {
            Some(c) if c.len() != n => {
                return Err(ConsensusError::InvalidConfig("one capability per node required".into()));
            }
            Some(c) if c.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) => {
                return Err(ConsensusError::InvalidConfig("capabilities must lie in (0, 1]".into()));
            }
            Some(c) => c.clone(),
            None => vec![1.0; n],
        };

        let genesis = Arc::new(Block::genesis(NodeId::default(), 0));
        let mut nodes = Vec::with_capacity(n);
        for (i, cap) in caps.into_iter().enumerate() {
            let keys = KeyPair::generate(&mut substream(spec.seed, "keys", i as u64));
            let mut ledger = DagLedger::with_max_parents(spec.epoch.max_parents);
            ledger.insert_block(Arc::clone(&genesis)).expect("genesis");
            nodes.push(SimNode {
                keys,
                ledger,
                accept_time: vec![0],
                mempool: Mempool::new(),
                capability: cap,
                requested: HashSet::new(),
            });
        }
        let ids: Vec<NodeId> = nodes.iter().map(|s| s.keys.node_id()).collect();
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        if index.len() != n {
            return Err(ConsensusError::InvalidConfig("node key collision".into()));
        }
        let all: BTreeSet<NodeId> = ids.iter().copied().collect();
        let rank = spec.initial_rank.unwrap_or(1.0 / n as f64);
        let table = RankingTable::with_rank(&all, rank, spec.epoch.rank)
            .map_err(|e| ConsensusError::InvalidConfig(e.to_string()))?;

        let f = spec.f.unwrap_or_else(|| default_f(n));
        // the primary is the first honest node
        let primary = (0..n)
            .find(|i| !spec.adversaries.contains_key(i))
            .map(|i| ids[i])
            .ok_or_else(|| ConsensusError::InvalidConfig("no honest node".into()))?;
        let committee =
            CommitteeState::new(all.clone(), primary, f).map_err(|e| ConsensusError::InvalidConfig(e.to_string()))?;
        if !committee.operational {
            return Err(ConsensusError::InvalidConfig(format!("{n} nodes cannot tolerate f = {f}")));
        }

        let adversaries: BTreeMap<NodeId, AdversaryProfile> = spec
            .adversaries
            .iter()
            .filter(|(_, b)| !b.is_empty())
            .map(|(i, b)| (ids[*i], AdversaryProfile::new(ids[*i], b.iter().copied())))
            .collect();
        let malicious: BTreeSet<NodeId> = adversaries.keys().copied().collect();
        let honest: BTreeSet<NodeId> = all.difference(&malicious).copied().collect();
        let population = NodePopulation::new(honest, malicious)?;

        let mut graph = EndorsementGraph::new();
        for id in &ids {
            graph.add_node(*id);
        }

        Ok(World {
            config: spec.epoch.clone(),
            seed: spec.seed,
            nodes,
            ids,
            index,
            table,
            committee,
            population,
            adversaries,
            queue: EventQueue::new(),
            trace: Vec::new(),
            rngs: Rngs {
                election: stream(spec.seed, "election"),
                delays: stream(spec.seed, "delays"),
                adversary: stream(spec.seed, "adversary"),
                txgen: stream(spec.seed, "txgen"),
                production: stream(spec.seed, "production"),
                scp: stream(spec.seed, "scp"),
            },
            cache: VerifyCache::default(),
            valid_blocks: HashSet::new(),
            graph,
            epoch: 0,
            cur: EpochState::default(),
            tx_load: spec.tx_load,
            payload_size: spec.payload_size,
            carry: Vec::new(),
            confirmed: HashSet::new(),
            confirmed_count: 0,
            entry_time: HashMap::new(),
            counted_txs: HashSet::new(),
            settled_inputs: HashMap::new(),
            submitted: Vec::new(),
            seen_conflicts: BTreeSet::new(),
            seen_equivocations: BTreeSet::new(),
            flagged: HashSet::new(),
            latencies: Vec::new(),
            metrics: Vec::new(),
            rejected: 0,
            digest_corruption: BTreeMap::new(),
            input_counter: 0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn node_index(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn keys(&self, i: usize) -> &KeyPair {
        &self.nodes[i].keys
    }

    pub fn ledger(&self, i: usize) -> &DagLedger {
        &self.nodes[i].ledger
    }

    /// Node `i`'s ledger as one JSON block per line, in acceptance order.
    pub fn export_ledger(&self, i: usize) -> String {
        let mut out = String::new();
        for b in self.nodes[i].ledger.blocks() {
            out.push_str(&serde_json::to_string(b).expect("block serializes"));
            out.push('\n');
        }
        out
    }

    pub fn capability(&self, id: &NodeId) -> f64 {
        self.index.get(id).map_or(0.0, |&i| self.nodes[i].capability)
    }

    pub fn table(&self) -> &RankingTable {
        &self.table
    }

    pub fn committee(&self) -> &CommitteeState {
        &self.committee
    }

    pub fn population(&self) -> &NodePopulation {
        &self.population
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn endorsement_graph(&self) -> &EndorsementGraph {
        &self.graph
    }

    /// Latency in seconds of every transaction confirmed so far.
    pub fn latencies(&self) -> &[f64] {
        &self.latencies
    }

    /// Transactions counted as confirmed, cumulative over all epochs.
    pub fn confirmed_txs(&self) -> &HashSet<Hash> {
        &self.counted_txs
    }

    /// Client transactions submitted but not yet confirmed.
    pub fn unconfirmed_txs(&self) -> usize {
        self.submitted.iter().filter(|t| !self.counted_txs.contains(t)).count()
    }

    /// Every `(winner, loser)` conflict detected so far.
    pub fn conflict_pairs(&self) -> &BTreeSet<(Hash, Hash)> {
        &self.seen_conflicts
    }

    /// Transactions waiting to be rerouted at the next epoch.
    pub fn carried_txs(&self) -> usize {
        self.carry.len()
    }

    pub fn verify_cache(&self) -> &VerifyCache {
        &self.cache
    }

    pub fn set_adversary(&mut self, node: NodeId, behaviors: impl IntoIterator<Item = Behavior>) {
        self.adversaries.insert(node, AdversaryProfile::new(node, behaviors));
    }

    pub fn clear_adversary(&mut self, node: &NodeId) {
        self.adversaries.remove(node);
    }

    /// Replaces `node`'s digest with garbage in the given (1-based) epoch.
    pub fn corrupt_digest(&mut self, epoch: u64, node: usize) {
        self.digest_corruption.insert(epoch, node);
    }

    pub fn run(&mut self, epochs: u64) -> Result<(), ConsensusError> {
        for _ in 0..epochs {
            self.step_epoch()?;
        }
        Ok(())
    }

    pub fn step_epoch(&mut self) -> Result<EpochMetrics, ConsensusError> {
        self.step_epoch_with(|_, _| {})
    }

    /// Runs one epoch. `after_election` sees the world right after producers
    /// are chosen, before any block is made.
    pub fn step_epoch_with(
        &mut self,
        after_election: impl FnOnce(&mut World, &Election),
    ) -> Result<EpochMetrics, ConsensusError> {
        if !self.committee.operational {
            return Err(ConsensusError::NonOperational(format!(
                "{} members, {} required",
                self.committee.size(),
                self.committee.min_size()
            )));
        }
        let e = self.epoch + 1;
        let cfg = self.config.clone();
        let t0 = (e - 1) * cfg.epoch_length;
        let t0_us = t0 * MICROS;
        self.queue.advance_to(t0_us);
        self.cur = EpochState::default();

        self.table.begin_epoch();
        let producers =
            elect_producers(&self.table, &self.committee, cfg.producers_per_epoch, &mut self.rngs.election)?;
        let leader = *producers
            .iter()
            .max_by(|a, b| {
                let (sa, sb) = (self.table.score(a).unwrap_or(0.0), self.table.score(b).unwrap_or(0.0));
                sa.total_cmp(&sb).then(b.cmp(a))
            })
            .expect("election returns at least one producer");
        let election = Election { producers, leader };
        after_election(self, &election);

        self.submit_transactions(t0, &election.producers);
        self.schedule_slots(t0, &election.producers);

        let t_digest = (t0 + cfg.epoch_length - cfg.settle_window / 2) * MICROS;
        self.run_to(t_digest);
        self.exchange_digests(e);
        let t_end = (t0 + cfg.epoch_length) * MICROS - 1;
        self.run_to(t_end);

        let digests = std::mem::take(&mut self.cur.digests);
        let verdict = verify_consistency(&digests, cfg.theta_max, self.nodes.len())?;
        let reference = self.reference_node(&verdict, e);
        let metrics = self.settle(e, reference, &election, &verdict)?;
        self.metrics.push(metrics.clone());
        self.epoch = e;
        Ok(metrics)
    }

    fn run_to(&mut self, t: SimTime) {
        let mut q = std::mem::take(&mut self.queue);
        let tr = run_until(&mut q, self, t);
        self.queue = q;
        self.trace.extend(tr);
    }

    fn route(producers: &[NodeId], tx: &Transaction) -> NodeId {
        producers[(tx.tx_id.low_u64() % producers.len() as u64) as usize]
    }

    fn submit_transactions(&mut self, t0: u64, producers: &[NodeId]) {
        let b = self.config.block_interval;
        let window = (self.config.slots() * b).saturating_sub(b / 2).max(1);
        let now = self.queue.now();
        let mut carry = std::mem::take(&mut self.carry);
        carry.sort_by_key(|t| (t.submit_time, t.tx_id));
        for tx in carry {
            let to = Self::route(producers, &tx);
            let at = now + self.config.delays.sample(&tx.sender, &to, &mut self.rngs.delays);
            self.queue
                .schedule(at, EventKind::DeliverTx, tx.sender, Destination::Node(to), false, Message::Tx(tx))
                .expect("future event");
        }
        let n = self.nodes.len();
        for _ in 0..self.tx_load {
            let sender = self.rngs.txgen.gen_range(0..n);
            let submit = t0 + self.rngs.txgen.gen_range(0..window);
            self.input_counter += 1;
            let mut seed = self.seed.to_le_bytes().to_vec();
            seed.extend_from_slice(b"input");
            seed.extend_from_slice(&self.input_counter.to_le_bytes());
            let input = double_sha256(&seed);
            let tx = Transaction::signed(&self.nodes[sender].keys, vec![input], self.payload_size, submit)
                .expect("single input");
            self.submitted.push(tx.tx_id);
            let to = Self::route(producers, &tx);
            let at = submit * MICROS + self.config.delays.sample(&tx.sender, &to, &mut self.rngs.delays);
            self.queue
                .schedule(at, EventKind::DeliverTx, tx.sender, Destination::Node(to), false, Message::Tx(tx))
                .expect("future event");
        }
    }

    fn schedule_slots(&mut self, t0: u64, producers: &[NodeId]) {
        let cfg = &self.config;
        let b = cfg.block_interval as f64;
        let cap = (cfg.block_interval - cfg.production_guard) as f64;
        let exp = Exp::new(1.0 / b).expect("positive interval");
        for p in producers {
            for slot in 0..cfg.slots() {
                let slot_start = t0 + slot * cfg.block_interval;
                // exponential jitter with the block interval as mean, truncated to
                // keep the block inside its slot
                let jitter = loop {
                    let x: f64 = exp.sample(&mut self.rngs.production);
                    if x <= cap {
                        break x;
                    }
                };
                let at = slot_start * MICROS + secs_to_us(jitter);
                let msg = Message::Slot { slot, slot_start };
                self.queue
                    .schedule(at, EventKind::ProduceBlock, *p, Destination::Node(*p), false, msg.clone())
                    .expect("future event");
                let deadline = (slot_start + cfg.block_interval) * MICROS;
                self.queue
                    .schedule(deadline, EventKind::ProducerTimeout, *p, Destination::Broadcast, false, msg)
                    .expect("future event");
            }
        }
    }

    fn exchange_digests(&mut self, e: u64) {
        let k = self.config.k_conf;
        let primary = self.committee.primary;
        let now = self.queue.now();
        let corrupt = self.digest_corruption.get(&e).copied();
        for i in 0..self.nodes.len() {
            let id = self.ids[i];
            let mut d = state_digest(id, e, &self.nodes[i].ledger, k);
            if corrupt == Some(i) {
                d.ledger_hash = double_sha256(&[d.ledger_hash.as_bytes().as_slice(), b"corrupt"].concat());
            }
            let at =
                if id == primary { now } else { now + self.config.delays.sample(&id, &primary, &mut self.rngs.delays) };
            self.queue
                .schedule(at, EventKind::DigestExchange, id, Destination::Node(primary), false, Message::Digest(d))
                .expect("future event");
        }
    }

    /// The first node whose own (uncorrupted) digest matches the agreed hash,
    /// or the primary when there is no agreement.
    fn reference_node(&self, verdict: &ConsistencyVerdict, e: u64) -> usize {
        if let Some(h) = verdict.agreed_hash() {
            for i in 0..self.nodes.len() {
                if state_digest(self.ids[i], e, &self.nodes[i].ledger, self.config.k_conf).ledger_hash == h {
                    return i;
                }
            }
        }
        self.index[&self.committee.primary]
    }

    /// Inserts into node `i`'s ledger and records acceptance side effects.
    fn node_insert(&mut self, i: usize, block: Arc<Block>, now: SimTime) -> Result<Insertion, LedgerError> {
        let res = self.nodes[i].ledger.insert_prevalidated(block)?;
        if let Insertion::Accepted(list) = &res {
            for h in list {
                self.nodes[i].accept_time.push(now);
                let b = self.nodes[i].ledger.get_shared(h).expect("just accepted");
                self.nodes[i].mempool.remove_included(&b);
                self.cur.slot_acceptance.entry((b.producer(), b.header.timestamp)).or_default().insert(i);
            }
        }
        Ok(res)
    }

    fn validate_once(&mut self, block: &Block) -> bool {
        if self.valid_blocks.contains(&block.block_hash) {
            return true;
        }
        if block.validate().is_err() {
            return false;
        }
        let txs_ok =
            block.body.iter().all(|tx| self.cache.verify(tx.sender.as_bytes(), &tx.signing_bytes(), &tx.signature));
        if txs_ok {
            self.valid_blocks.insert(block.block_hash);
        }
        txs_ok
    }

    fn on_produce(&mut self, p: usize, slot: u64, slot_start: u64) {
        let id = self.ids[p];
        let cap = self.nodes[p].capability;
        if cap < 1.0 && self.rngs.production.gen::<f64>() >= cap {
            // capacity failure: the slot is owed but nothing is produced
            self.cur.expected.insert((id, slot_start));
            return;
        }
        let budget = ((cap * self.config.max_block_txs as f64).ceil() as usize).max(1);
        let txs = self.nodes[p].mempool.peek(budget);
        let profile = self.adversaries.get(&id).cloned();
        let forced = profile.as_ref().is_some_and(|pr| pr.has(Behavior::DoubleSpend));
        if txs.is_empty() && !forced {
            return;
        }
        self.cur.expected.insert((id, slot_start));
        let parents = select_tips(&self.nodes[p].ledger, self.config.max_parents, &mut self.rngs.production);
        let plan = SlotPlan { txs, nonce: slot };
        let planned =
            apply_adversary(profile.as_ref(), plan, &self.nodes[p].keys, slot_start, &mut self.rngs.adversary);
        let now = self.queue.now();
        let others: Vec<NodeId> = self.ids.iter().copied().filter(|n| *n != id).collect();
        for pb in planned {
            let block = match self.nodes[p].ledger.create_block(id, &parents, pb.txs, slot_start, pb.nonce) {
                Ok(b) => Arc::new(b),
                Err(_) => continue,
            };
            if !self.validate_once(&block) {
                continue;
            }
            if self.node_insert(p, Arc::clone(&block), now).is_err() {
                continue;
            }
            let mut signature = self.nodes[p].keys.sign(block.block_hash.as_bytes());
            if pb.corrupt_signature {
                corrupt_signature(&mut signature);
            }
            let targets: Vec<NodeId> = match pb.audience {
                Audience::All => others.clone(),
                Audience::LocalOnly => Vec::new(),
                Audience::Half(h) => {
                    others.iter().enumerate().filter(|(k, _)| (*k % 2) as u8 == h).map(|(_, n)| *n).collect()
                }
            };
            let msg = Message::Block { block, signature };
            broadcast(
                &mut self.queue,
                EventKind::DeliverBlock,
                id,
                &targets,
                &msg,
                &self.config.delays,
                pb.adversarial,
                &mut self.rngs.delays,
            );
        }
    }

    fn on_block(&mut self, r: usize, from: NodeId, block: Arc<Block>, signature: &[u8]) {
        if !self.cache.verify(from.as_bytes(), block.block_hash.as_bytes(), signature) {
            self.rejected += 1;
            return;
        }
        let h = block.block_hash;
        if self.nodes[r].ledger.contains(&h) || self.nodes[r].ledger.is_pending(&h) {
            return;
        }
        if !self.validate_once(&block) {
            self.rejected += 1;
            return;
        }
        let now = self.queue.now();
        match self.node_insert(r, block, now) {
            Ok(Insertion::Pending { missing }) => {
                let Some(&s) = self.index.get(&from) else { return };
                for m in missing {
                    if !self.nodes[r].requested.insert(m) {
                        continue;
                    }
                    let Some(parent) = self.nodes[s].ledger.get_shared(&m) else {
                        continue;
                    };
                    // request and response: two link traversals
                    let to = self.ids[r];
                    let d = self.config.delays.sample(&to, &from, &mut self.rngs.delays)
                        + self.config.delays.sample(&from, &to, &mut self.rngs.delays);
                    let signature = self.nodes[s].keys.sign(m.as_bytes());
                    let msg = Message::Block { block: parent, signature };
                    self.queue
                        .schedule(now + d, EventKind::DeliverBlock, from, Destination::Node(to), false, msg)
                        .expect("future event");
                }
            }
            Ok(Insertion::Accepted(_)) | Err(LedgerError::Duplicate(_)) => {}
            Err(_) => self.rejected += 1,
        }
    }

    fn on_timeout(&mut self, producer: NodeId, slot_start: u64) {
        if !self.cur.expected.contains(&(producer, slot_start)) {
            return;
        }
        let p = self.index[&producer];
        let got =
            self.cur.slot_acceptance.get(&(producer, slot_start)).map_or(0, |s| s.iter().filter(|i| **i != p).count());
        let peers = self.committee.members.iter().filter(|m| **m != producer).count();
        if 2 * got < peers {
            self.cur.timeouts.push(producer);
        }
    }

    /// Acceptance time, at node `r`, of the `k`-th descendant of block `i`.
    fn secured_at(&self, r: usize, i: usize, k: usize) -> SimTime {
        let ledger = &self.nodes[r].ledger;
        let mut seen = BTreeSet::new();
        let mut stack = vec![i];
        while let Some(x) = stack.pop() {
            for &c in ledger.child_indices(x) {
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        let kth = seen.iter().nth(k.saturating_sub(1)).copied().unwrap_or(i);
        self.nodes[r].accept_time[kth]
    }

    fn settle(
        &mut self,
        e: u64,
        r: usize,
        election: &Election,
        verdict: &ConsistencyVerdict,
    ) -> Result<EpochMetrics, ConsensusError> {
        let k = self.config.k_conf;
        let now = self.queue.now();
        let ledger = self.nodes[r].ledger.clone();
        let layers = classify_layers(&ledger, k);
        let order = order_blocks(&ledger, &layers).expect("ledger holds genesis");

        let mut penalties: Vec<NodeId> = std::mem::take(&mut self.cur.timeouts);
        let timeouts = penalties.len();

        // equivocation: one producer, several blocks for one slot
        let mut by_slot: BTreeMap<(NodeId, u64), Vec<Hash>> = BTreeMap::new();
        for b in ledger.blocks().filter(|b| !b.is_genesis()) {
            by_slot.entry((b.producer(), b.header.timestamp)).or_default().push(b.block_hash);
        }
        let mut equivocations = 0;
        for (key, hashes) in by_slot.iter().filter(|(_, v)| v.len() > 1) {
            self.flagged.extend(hashes.iter().copied());
            if self.seen_equivocations.insert(*key) {
                penalties.push(key.0);
                equivocations += 1;
            }
        }

        let report = detect_double_spend(&ledger, &order);
        let mut clashes: Vec<(Hash, Hash, Hash)> = report
            .conflicts
            .iter()
            .filter(|c| !self.counted_txs.contains(&c.loser))
            .map(|c| (c.winner, c.loser, c.loser_block))
            .collect();
        // a later reordering must not let a tx take inputs already settled
        let mut fresh: Vec<(Hash, &Transaction)> = Vec::new();
        for (bh, tx) in effective_transactions(&ledger, &order, &report) {
            if self.counted_txs.contains(&tx.tx_id) {
                continue;
            }
            match tx.inputs.iter().find_map(|i| self.settled_inputs.get(i)) {
                Some(prev) => clashes.push((*prev, tx.tx_id, bh)),
                None => fresh.push((bh, tx)),
            }
        }
        let mut conflicts = 0;
        for (winner, loser, loser_block) in clashes {
            if !self.seen_conflicts.insert((winner, loser)) {
                continue;
            }
            conflicts += 1;
            self.flagged.insert(loser_block);
            let lb = ledger.get(&loser_block).expect("ordered block");
            let mut offenders = BTreeSet::new();
            offenders.insert(lb.producer());
            if let Some(tx) = lb.body.iter().find(|t| t.tx_id == loser) {
                offenders.insert(tx.sender);
            }
            penalties.extend(offenders);
        }

        let mut referrals = BTreeSet::new();
        for p in penalties {
            if let Some(rf) =
                self.table.update_ranks(p, RankEvent::Misbehavior, &mut self.rngs.scp).expect("penalized node is known")
            {
                referrals.insert(rf.node);
            }
        }

        // rewards for newly confirmed blocks
        let newly: Vec<Hash> = order.confirmed.iter().filter(|h| !self.confirmed.contains(h)).copied().collect();
        for h in &newly {
            self.confirmed.insert(*h);
            let i = ledger.index_of(h).expect("ordered block");
            let at = self.secured_at(r, i, k);
            self.entry_time.insert(*h, at);
            let b = ledger.get(h).expect("ordered block");
            if b.is_genesis() || self.flagged.contains(h) {
                continue;
            }
            let producer = b.producer();
            self.apply_reward(producer, RankEvent::BlockConfirmed, &mut referrals);
            let endorsers: BTreeSet<NodeId> = ledger
                .child_indices(i)
                .iter()
                .map(|&c| ledger.block_at(c))
                .filter(|c| !self.flagged.contains(&c.block_hash) && c.producer() != producer)
                .map(|c| c.producer())
                .collect();
            for en in endorsers {
                self.graph.endorse(en, producer);
                let bytes = b.payload_bytes();
                self.apply_reward(en, RankEvent::TxVerified { bytes }, &mut referrals);
            }
        }
        self.confirmed_count += newly.len();

        let mut new_txs = 0usize;
        let mut lat_sum = 0.0;
        for (bh, tx) in fresh {
            if !self.counted_txs.insert(tx.tx_id) {
                continue;
            }
            for i in &tx.inputs {
                self.settled_inputs.insert(*i, tx.tx_id);
            }
            new_txs += 1;
            let entered = self.entry_time.get(&bh).copied().unwrap_or(now);
            let lat = entered.saturating_sub(tx.submit_time * MICROS) as f64 / MICROS as f64;
            lat_sum += lat;
            self.latencies.push(lat);
        }

        let evicted = self.process_referrals(referrals);
        self.table.apply_link_ranks(&self.graph).map_err(|e| ConsensusError::InvalidConfig(e.to_string()))?;

        // unincluded transactions are rerouted next epoch
        for node in self.nodes.iter_mut() {
            self.carry.extend(node.mempool.drain());
        }

        let span = self.config.epoch_length as f64;
        let liveness = liveness_ratio(&self.population)?;
        let (dissenters, consistency) = (verdict.flagged().into_iter().collect(), verdict.label().to_string());
        Ok(EpochMetrics {
            epoch: e,
            confirmed_blocks: self.confirmed_count,
            confirmed_txs: new_txs,
            tps: throughput(new_txs as u64, span).expect("positive span"),
            raw_ratio: (new_txs > 0).then(|| span / new_txs as f64),
            mean_latency: (new_txs > 0).then(|| lat_sum / new_txs as f64),
            committee_size: self.committee.size(),
            theta: liveness.theta,
            consistency,
            dissenters,
            leader: election.leader,
            leader_capability: self.capability(&election.leader),
            producers: election.producers.clone(),
            timeouts,
            conflicts,
            equivocations,
            evicted,
            rejected_messages: self.rejected,
        })
    }

    fn apply_reward(&mut self, node: NodeId, ev: RankEvent, referrals: &mut BTreeSet<NodeId>) {
        if let Some(rf) = self.table.update_ranks(node, ev, &mut self.rngs.scp).expect("rewarded node is known") {
            referrals.insert(rf.node);
        }
    }

    /// Evicts every referred committee member, promoting waiting nodes as
    /// needed, and broadcasts the signed confirmations.
    fn process_referrals(&mut self, referrals: BTreeSet<NodeId>) -> Vec<NodeId> {
        let mut evicted = Vec::new();
        self.committee.clock = self.queue.now() / MICROS;
        for node in referrals {
            if !self.committee.members.contains(&node) {
                continue;
            }
            let primary = self.index[&self.committee.primary];
            let primary_keys = self.nodes[primary].keys.clone();
            let rank = self.table.rank(&node).unwrap_or(0.0);
            let ticket = match eviction_ticket(&self.committee, &primary_keys, node, rank) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let table = &self.table;
            let outcome =
                match self.committee.process_exit(ticket, &primary_keys, |n| table.rank(n).unwrap_or(f64::MIN)) {
                    Ok(o) => o,
                    Err(_) => continue,
                };
            let _ = self.table.set_status(&node, NodeStatus::Exited);
            for p in &outcome.promoted {
                let _ = self.table.set_status(p, NodeStatus::Consensus);
            }
            let msg = Message::Scp(Box::new(outcome.prepare));
            broadcast(
                &mut self.queue,
                EventKind::ScpMessage,
                primary_keys.node_id(),
                &self.ids,
                &msg,
                &self.config.delays,
                false,
                &mut self.rngs.delays,
            );
            evicted.push(node);
        }
        evicted
    }
}

impl Handler<Message> for World {
    fn handle(&mut self, ev: SimEvent<Message>, _queue: &mut EventQueue<Message>) {
        // run_to moves the queue out of `self`; swap it back in for the handlers
        std::mem::swap(&mut self.queue, _queue);
        let to = match ev.to {
            Destination::Node(n) => self.index.get(&n).copied(),
            Destination::Broadcast => None,
        };
        match (ev.kind, ev.payload) {
            (EventKind::DeliverTx, Message::Tx(tx)) => {
                if let Some(r) = to {
                    if self.cache.verify(tx.sender.as_bytes(), &tx.signing_bytes(), &tx.signature) {
                        self.nodes[r].mempool.submit(tx);
                    } else {
                        self.rejected += 1;
                    }
                }
            }
            (EventKind::ProduceBlock, Message::Slot { slot, slot_start }) => {
                if let Some(p) = self.index.get(&ev.from).copied() {
                    self.on_produce(p, slot, slot_start);
                }
            }
            (EventKind::DeliverBlock, Message::Block { block, signature }) => {
                if let Some(r) = to {
                    self.on_block(r, ev.from, block, &signature);
                }
            }
            (EventKind::ProducerTimeout, Message::Slot { slot_start, .. }) => {
                self.on_timeout(ev.from, slot_start);
            }
            (EventKind::DigestExchange, Message::Digest(d)) => {
                if to.map(|r| self.ids[r]) == Some(self.committee.primary) {
                    self.cur.digests.push(d);
                }
            }
            (EventKind::ScpMessage, Message::Scp(m)) => {
                if !m.verify() {
                    self.rejected += 1;
                }
            }
            _ => self.rejected += 1,
        }
        std::mem::swap(&mut self.queue, _queue);
    }
}
