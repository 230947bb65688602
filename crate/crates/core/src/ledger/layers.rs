use std::collections::BTreeSet;

use super::DagLedger;
use crate::hash::Hash;

pub const DEFAULT_K_CONF: usize = 6;

/// Partition of accepted blocks into the secured (S) and unsecured (U) layers.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LayerAssignment {
    pub secured: BTreeSet<Hash>,
    pub unsecured: BTreeSet<Hash>,
    pub k_conf: usize,
}

impl LayerAssignment {
    pub fn is_secured(&self, h: &Hash) -> bool {
        self.secured.contains(h)
    }
}

/// Distinct-descendant count of every accepted block, indexed in acceptance
/// order.
pub fn descendant_counts(ledger: &DagLedger) -> Vec<usize> {
    let n = ledger.len();
    let words = n.div_ceil(64);
    let mut desc = vec![0u64; n * words];
    let mut counts = vec![0usize; n];
    // Acceptance order is topological, so children always have larger indices.
    for i in (0..n).rev() {
        for &c in ledger.child_indices(i) {
            let (lo, hi) = desc.split_at_mut(c * words);
            let row = &mut lo[i * words..(i + 1) * words];
            let child_row = &hi[..words];
            for (r, cw) in row.iter_mut().zip(child_row) {
                *r |= *cw;
            }
            row[c / 64] |= 1u64 << (c % 64);
        }
        counts[i] = desc[i * words..(i + 1) * words].iter().map(|w| w.count_ones() as usize).sum();
    }
    counts
}

/// Blocks with at least `k_conf` distinct descendants are secured.
pub fn classify_layers(ledger: &DagLedger, k_conf: usize) -> LayerAssignment {
    assert!(k_conf >= 1, "k_conf must be at least 1");
    let counts = descendant_counts(ledger);
    let mut out = LayerAssignment { k_conf, ..Default::default() };
    for (i, block) in ledger.blocks().enumerate() {
        if counts[i] >= k_conf {
            out.secured.insert(block.block_hash);
        } else {
            out.unsecured.insert(block.block_hash);
        }
    }
    out
}
