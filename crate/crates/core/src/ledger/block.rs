use serde::{Deserialize, Serialize};

use super::{merkle_root, LedgerError, Transaction};
use crate::hash::{double_sha256, Hash, NodeId};

pub const BLOCK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub version: u32,
    /// Sorted ascending, no duplicates; empty only for genesis.
    pub parent_hashes: Vec<Hash>,
    pub merkle_root: Hash,
    /// Simulated seconds.
    pub timestamp: u64,
    pub producer: NodeId,
    pub nonce: u64,
}

impl BlockHeader {
    /// version(u32) ∥ parent_count(u16) ∥ parents(32 each, ascending) ∥
    /// merkle_root(32) ∥ timestamp(u64) ∥ producer(32) ∥ nonce(u64).
    /// Little-endian throughout.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        if self.parent_hashes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LedgerError::MalformedHeader(
                "parent hashes must be sorted ascending without duplicates".into(),
            ));
        }
        if self.parent_hashes.len() > u16::MAX as usize {
            return Err(LedgerError::MalformedHeader("too many parents".into()));
        }
        let mut out = Vec::with_capacity(4 + 2 + 32 * self.parent_hashes.len() + 32 + 8 + 32 + 8);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.parent_hashes.len() as u16).to_le_bytes());
        for p in &self.parent_hashes {
            out.extend_from_slice(p.as_bytes());
        }
        out.extend_from_slice(self.merkle_root.as_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(self.producer.as_bytes());
        out.extend_from_slice(&self.nonce.to_le_bytes());
        Ok(out)
    }
}

/// SHA256(SHA256(canonical header bytes)).
pub fn hash_block(header: &BlockHeader) -> Result<Hash, LedgerError> {
    Ok(double_sha256(&header.canonical_bytes()?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub body: Vec<Transaction>,
    pub block_hash: Hash,
}

impl Block {
    /// Assembles a block, sorting the parents and computing the Merkle root and
    /// hash. Does not consult any ledger.
    pub fn assemble(
        producer: NodeId,
        mut parents: Vec<Hash>,
        body: Vec<Transaction>,
        timestamp: u64,
        nonce: u64,
    ) -> Result<Self, LedgerError> {
        parents.sort_unstable();
        if parents.windows(2).any(|w| w[0] == w[1]) {
            return Err(LedgerError::MalformedHeader("duplicate parent".into()));
        }
        let header = BlockHeader {
            version: BLOCK_VERSION,
            parent_hashes: parents,
            merkle_root: merkle_root(&body),
            timestamp,
            producer,
            nonce,
        };
        let block_hash = hash_block(&header)?;
        Ok(Block { header, body, block_hash })
    }

    pub fn genesis(producer: NodeId, timestamp: u64) -> Self {
        Self::assemble(producer, Vec::new(), Vec::new(), timestamp, 0).expect("genesis header is well-formed")
    }

    pub fn is_genesis(&self) -> bool {
        self.header.parent_hashes.is_empty()
    }

    pub fn parents(&self) -> &[Hash] {
        &self.header.parent_hashes
    }

    pub fn producer(&self) -> NodeId {
        self.header.producer
    }

    /// Sum of transaction payload sizes.
    pub fn payload_bytes(&self) -> u64 {
        self.body.iter().map(|t| t.payload_size as u64).sum()
    }

    /// Structural checks that need no ledger: cached hash, Merkle root,
    /// transaction ids, body rules.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let computed = hash_block(&self.header)?;
        if computed != self.block_hash {
            return Err(LedgerError::HashMismatch { claimed: self.block_hash, computed });
        }
        if self.header.parent_hashes.contains(&self.block_hash) {
            return Err(LedgerError::SelfReference(self.block_hash));
        }
        if !self.is_genesis() && self.body.is_empty() {
            return Err(LedgerError::EmptyBody);
        }
        for tx in &self.body {
            tx.check()?;
        }
        if merkle_root(&self.body) != self.header.merkle_root {
            return Err(LedgerError::MerkleMismatch);
        }
        Ok(())
    }
}
