//! The blockDAG ledger.
//!
//! Blocks reference one or more earlier blocks (`a ← b` means `b` confirms
//! `a`). The ledger accepts a block only once all of its parents are accepted,
//! so every edge points from a later block to an earlier one and the graph is
//! acyclic by construction.

mod block;
mod conflict;
mod dag;
mod layers;
mod mempool;
mod merkle;
mod order;
mod tx;

pub use block::{hash_block, Block, BlockHeader, BLOCK_VERSION};
pub use conflict::{detect_double_spend, effective_transactions, Conflict, ConflictReport};
pub use dag::{select_tips, DagLedger, Insertion, DEFAULT_MAX_PARENTS};
pub use layers::{classify_layers, LayerAssignment, DEFAULT_K_CONF};
pub use mempool::Mempool;
pub use merkle::{merkle_root, merkle_root_of_leaves};
pub use order::{order_blocks, BlockOrder};
pub use tx::Transaction;

pub(crate) use tx::hex_bytes;

use crate::hash::Hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("duplicate input within a transaction")]
    DuplicateInput,
    #[error("transaction id {0} does not match its contents")]
    TxIdMismatch(Hash),
    #[error("block hash mismatch: claimed {claimed}, computed {computed}")]
    HashMismatch { claimed: Hash, computed: Hash },
    #[error("merkle root does not match body")]
    MerkleMismatch,
    #[error("block {0} references itself")]
    SelfReference(Hash),
    #[error("non-genesis block with empty body")]
    EmptyBody,
    #[error("block {0} already known")]
    Duplicate(Hash),
    #[error("ledger already has a genesis block")]
    SecondGenesis,
    #[error("parent {0} is not accepted in this ledger")]
    UnknownParent(Hash),
    #[error("{count} parents exceeds the limit of {max}")]
    TooManyParents { count: usize, max: usize },
    #[error("no tips given for a non-genesis block")]
    NoTips,
    #[error("ledger is empty")]
    EmptyLedger,
}
