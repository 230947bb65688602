use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{DagLedger, LayerAssignment, LedgerError, Transaction};
use crate::hash::Hash;

/// Output of [`order_blocks`]: one traversal split into the confirmed (S-layer)
/// and unconfirmed (U-layer) lists, each keeping traversal order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BlockOrder {
    pub confirmed: Vec<Hash>,
    pub unconfirmed: Vec<Hash>,
}

impl BlockOrder {
    /// Confirmed followed by unconfirmed.
    pub fn concatenated(&self) -> impl Iterator<Item = &Hash> {
        self.confirmed.iter().chain(self.unconfirmed.iter())
    }

    /// Transactions in ledger order: block order, then body order. Each item
    /// carries its block hash and whether the block is confirmed.
    pub fn transactions<'a>(
        &'a self,
        ledger: &'a DagLedger,
    ) -> impl Iterator<Item = (Hash, bool, &'a Transaction)> + 'a {
        let confirmed = self.confirmed.iter().map(|h| (*h, true));
        let unconfirmed = self.unconfirmed.iter().map(|h| (*h, false));
        confirmed.chain(unconfirmed).flat_map(move |(h, c)| {
            let block = ledger.get(&h).expect("ordered block is in ledger");
            block.body.iter().map(move |tx| (h, c, tx))
        })
    }
}

/// Orders the DAG starting at genesis, always visiting the smallest-hash block
/// whose parents have all been visited, with each block's children considered
/// in ascending hash order. The result is the hash-lexicographically smallest
/// topological order, split by layer.
pub fn order_blocks(ledger: &DagLedger, layers: &LayerAssignment) -> Result<BlockOrder, LedgerError> {
    let genesis = ledger.genesis().ok_or(LedgerError::EmptyLedger)?;
    let n = ledger.len();
    let mut remaining: Vec<usize> = (0..n).map(|i| ledger.parent_indices(i).len()).collect();
    let mut ready = BinaryHeap::new();
    ready.push(Reverse((genesis, ledger.index_of(&genesis).expect("genesis accepted"))));

    let mut out = BlockOrder::default();
    while let Some(Reverse((hash, i))) = ready.pop() {
        if layers.secured.contains(&hash) {
            out.confirmed.push(hash);
        } else {
            out.unconfirmed.push(hash);
        }
        let mut children: Vec<(Hash, usize)> =
            ledger.child_indices(i).iter().map(|&c| (ledger.block_at(c).block_hash, c)).collect();
        children.sort_unstable();
        for (ch, c) in children {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                ready.push(Reverse((ch, c)));
            }
        }
    }
    debug_assert_eq!(out.confirmed.len() + out.unconfirmed.len(), n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::NodeId;
    use crate::ledger::{classify_layers, Block};
    use std::collections::BTreeSet;

    fn tx(n: u8) -> Transaction {
        Transaction::new(NodeId::from_byte(1), vec![Hash([n; 32])], 1, 0, vec![]).unwrap()
    }

    #[test]
    fn empty_ledger_errors() {
        let l = DagLedger::new();
        assert_eq!(order_blocks(&l, &LayerAssignment::default()), Err(LedgerError::EmptyLedger));
    }

    #[test]
    fn genesis_only() {
        let mut l = DagLedger::new();
        let g = Block::genesis(NodeId::default(), 0);
        l.insert_block(g.clone()).unwrap();
        let layers = classify_layers(&l, 1);
        let o = order_blocks(&l, &layers).unwrap();
        assert_eq!(o.confirmed, Vec::<Hash>::new());
        // A lone genesis is a tip with no descendants, so it sits in the U-layer.
        assert_eq!(o.unconfirmed, vec![g.block_hash]);
    }

    #[test]
    fn diamond() {
        let mut l = DagLedger::new();
        let g = Block::genesis(NodeId::default(), 0);
        l.insert_block(g.clone()).unwrap();
        let gt: BTreeSet<Hash> = [g.block_hash].into_iter().collect();
        let a = l.create_block(NodeId::from_byte(1), &gt, vec![tx(1)], 1, 0).unwrap();
        let b = l.create_block(NodeId::from_byte(2), &gt, vec![tx(2)], 1, 0).unwrap();
        let (a, b) = if a.block_hash < b.block_hash { (a, b) } else { (b, a) };
        l.insert_block(b.clone()).unwrap();
        l.insert_block(a.clone()).unwrap();
        let tips = l.tips().clone();
        let c = l.create_block(NodeId::from_byte(3), &tips, vec![tx(3)], 2, 0).unwrap();
        l.insert_block(c.clone()).unwrap();

        let o = order_blocks(&l, &classify_layers(&l, 1)).unwrap();
        assert_eq!(o.confirmed, vec![g.block_hash, a.block_hash, b.block_hash]);
        assert_eq!(o.unconfirmed, vec![c.block_hash]);
    }
}
