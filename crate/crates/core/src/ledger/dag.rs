use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;

use super::{Block, LedgerError, Transaction};
use crate::hash::{Hash, NodeId};

pub const DEFAULT_MAX_PARENTS: usize = 8;

/// Outcome of a successful [`DagLedger::insert_block`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Insertion {
    /// The block and any buffered descendants it released, in acceptance
    /// order.
    Accepted(Vec<Hash>),
    /// Buffered until the listed parents arrive.
    Pending { missing: Vec<Hash> },
}

impl Insertion {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Insertion::Accepted(_))
    }
}

/// Append-only blockDAG with tip tracking and an orphan buffer.
///
/// Accepted blocks are stored in acceptance order, which is always a valid
/// topological order. Single writer; clone for snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct DagLedger {
    blocks: Vec<Arc<Block>>,
    index: HashMap<Hash, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    tips: BTreeSet<Hash>,
    genesis: Option<Hash>,
    pending: BTreeMap<Hash, Arc<Block>>,
    /// missing parent → pending blocks waiting on it
    waiting_on: BTreeMap<Hash, BTreeSet<Hash>>,
    max_parents: usize,
}

impl Default for DagLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl DagLedger {
    pub fn new() -> Self {
        Self::with_max_parents(DEFAULT_MAX_PARENTS)
    }

    pub fn with_max_parents(max_parents: usize) -> Self {
        DagLedger {
            blocks: Vec::new(),
            index: HashMap::new(),
            parents: Vec::new(),
            children: Vec::new(),
            tips: BTreeSet::new(),
            genesis: None,
            pending: BTreeMap::new(),
            waiting_on: BTreeMap::new(),
            max_parents,
        }
    }

    pub fn max_parents(&self) -> usize {
        self.max_parents
    }

    /// Number of accepted blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn genesis(&self) -> Option<Hash> {
        self.genesis
    }

    pub fn tips(&self) -> &BTreeSet<Hash> {
        &self.tips
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.index.contains_key(hash)
    }

    pub fn is_pending(&self, hash: &Hash) -> bool {
        self.pending.contains_key(hash)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_blocks(&self) -> impl Iterator<Item = &Block> {
        self.pending.values().map(|b| b.as_ref())
    }

    /// Parents referenced by pending blocks that this ledger has not seen.
    pub fn missing_parents(&self) -> impl Iterator<Item = &Hash> {
        self.waiting_on.keys()
    }

    pub fn get(&self, hash: &Hash) -> Option<&Block> {
        self.index.get(hash).map(|&i| self.blocks[i].as_ref())
    }

    pub fn get_shared(&self, hash: &Hash) -> Option<Arc<Block>> {
        self.index.get(hash).map(|&i| Arc::clone(&self.blocks[i])).or_else(|| self.pending.get(hash).cloned())
    }

    /// Accepted blocks in acceptance (topological) order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().map(|b| b.as_ref())
    }

    pub(crate) fn index_of(&self, hash: &Hash) -> Option<usize> {
        self.index.get(hash).copied()
    }

    pub(crate) fn block_at(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub(crate) fn parent_indices(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub(crate) fn child_indices(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn children_of(&self, hash: &Hash) -> Vec<Hash> {
        match self.index.get(hash) {
            Some(&i) => self.children[i].iter().map(|&c| self.blocks[c].block_hash).collect(),
            None => Vec::new(),
        }
    }

    /// Builds a block over `tips`, which must all be accepted here. With no
    /// tips the result is a genesis block, allowed only in an empty ledger.
    pub fn create_block(
        &self,
        producer: NodeId,
        tips: &BTreeSet<Hash>,
        txs: Vec<Transaction>,
        now: u64,
        nonce: u64,
    ) -> Result<Block, LedgerError> {
        if tips.is_empty() && !self.is_empty() {
            return Err(LedgerError::NoTips);
        }
        if tips.len() > self.max_parents {
            return Err(LedgerError::TooManyParents { count: tips.len(), max: self.max_parents });
        }
        if let Some(unknown) = tips.iter().find(|t| !self.contains(t)) {
            return Err(LedgerError::UnknownParent(*unknown));
        }
        Block::assemble(producer, tips.iter().copied().collect(), txs, now, nonce)
    }

    /// Inserts a block. Blocks with unknown parents are buffered and retried
    /// when the parents arrive; re-inserting a known or buffered block is an
    /// error that leaves the ledger unchanged.
    pub fn insert_block(&mut self, block: impl Into<Arc<Block>>) -> Result<Insertion, LedgerError> {
        self.insert_inner(block.into(), true)
    }

    /// As [`insert_block`](Self::insert_block) for a block whose `validate()`
    /// the caller has already seen succeed. Lets many simulated receivers of
    /// one shared block skip repeating the same pure check.
    pub(crate) fn insert_prevalidated(&mut self, block: Arc<Block>) -> Result<Insertion, LedgerError> {
        self.insert_inner(block, false)
    }

    fn insert_inner(&mut self, block: Arc<Block>, validate: bool) -> Result<Insertion, LedgerError> {
        let hash = block.block_hash;
        if self.index.contains_key(&hash) || self.pending.contains_key(&hash) {
            return Err(LedgerError::Duplicate(hash));
        }
        if validate {
            block.validate()?;
        }
        let parent_count = block.parents().len();
        if parent_count > self.max_parents {
            return Err(LedgerError::TooManyParents { count: parent_count, max: self.max_parents });
        }
        if block.is_genesis() {
            if self.genesis.is_some() {
                return Err(LedgerError::SecondGenesis);
            }
            self.accept(block);
            let mut accepted = vec![hash];
            self.release_waiting(hash, &mut accepted);
            return Ok(Insertion::Accepted(accepted));
        }

        let missing: Vec<Hash> = block.parents().iter().filter(|p| !self.index.contains_key(*p)).copied().collect();
        if !missing.is_empty() {
            for m in &missing {
                self.waiting_on.entry(*m).or_default().insert(hash);
            }
            self.pending.insert(hash, block);
            return Ok(Insertion::Pending { missing });
        }

        self.accept(block);
        let mut accepted = vec![hash];
        self.release_waiting(hash, &mut accepted);
        Ok(Insertion::Accepted(accepted))
    }

    fn accept(&mut self, block: Arc<Block>) {
        let i = self.blocks.len();
        let hash = block.block_hash;
        let parent_idx: Vec<usize> = block.parents().iter().map(|p| self.index[p]).collect();
        for &p in &parent_idx {
            self.children[p].push(i);
            self.tips.remove(&self.blocks[p].block_hash);
        }
        if block.is_genesis() {
            self.genesis = Some(hash);
        }
        self.index.insert(hash, i);
        self.parents.push(parent_idx);
        self.children.push(Vec::new());
        self.tips.insert(hash);
        self.blocks.push(block);
    }

    fn release_waiting(&mut self, root: Hash, accepted: &mut Vec<Hash>) {
        let mut ready = BTreeSet::new();
        ready.insert(root);
        while let Some(h) = ready.pop_first() {
            let Some(waiters) = self.waiting_on.remove(&h) else {
                continue;
            };
            for w in waiters {
                // already released through another parent
                let Some(pending) = self.pending.get(&w) else {
                    continue;
                };
                let complete = pending.parents().iter().all(|p| self.index.contains_key(p));
                if complete {
                    let block = self.pending.remove(&w).expect("waiter is pending");
                    self.accept(block);
                    accepted.push(w);
                    ready.insert(w);
                }
            }
        }
    }

    /// Tips recomputed from scratch: accepted blocks referenced by no accepted
    /// block.
    pub fn recompute_tips(&self) -> BTreeSet<Hash> {
        let referenced: BTreeSet<Hash> = self.blocks.iter().flat_map(|b| b.parents().iter().copied()).collect();
        self.blocks.iter().map(|b| b.block_hash).filter(|h| !referenced.contains(h)).collect()
    }
}

/// Picks `min(k, |tips|)` distinct tips uniformly at random.
pub fn select_tips<R: Rng + ?Sized>(ledger: &DagLedger, k: usize, rng: &mut R) -> BTreeSet<Hash> {
    let tips: Vec<Hash> = ledger.tips().iter().copied().collect();
    let take = k.min(tips.len());
    if take == tips.len() {
        return tips.into_iter().collect();
    }
    rand::seq::index::sample(rng, tips.len(), take).into_iter().map(|i| tips[i]).collect()
}
