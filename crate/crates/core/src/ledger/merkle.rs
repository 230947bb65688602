use super::Transaction;
use crate::hash::{double_sha256, Hash};

/// Binary Merkle root over transaction ids.
///
/// Leaves are the double SHA-256 of each transaction's serialization (its
/// `tx_id`). An unpaired node at any level is paired with itself. The empty
/// list maps to the all-zero hash, and a single leaf is its own root.
pub fn merkle_root(txs: &[Transaction]) -> Hash {
    let leaves: Vec<Hash> = txs.iter().map(|tx| tx.tx_id).collect();
    merkle_root_of_leaves(&leaves)
}

pub fn merkle_root_of_leaves(leaves: &[Hash]) -> Hash {
    if leaves.is_empty() {
        return Hash::ZERO;
    }
    let mut level = leaves.to_vec();
    let mut buf = [0u8; 64];
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            let left = pair[0];
            let right = pair.get(1).copied().unwrap_or(left);
            buf[..32].copy_from_slice(left.as_bytes());
            buf[32..].copy_from_slice(right.as_bytes());
            next.push(double_sha256(&buf));
        }
        level = next;
    }
    level[0]
}
