use std::collections::{BTreeMap, HashMap};

use super::{Block, Transaction};
use crate::hash::Hash;

/// Pending transactions ordered by `(submit_time, tx_id)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mempool {
    queue: BTreeMap<(u64, Hash), Transaction>,
    by_id: HashMap<Hash, u64>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, tx_id: &Hash) -> bool {
        self.by_id.contains_key(tx_id)
    }

    /// Returns false if the transaction is already queued.
    pub fn submit(&mut self, tx: Transaction) -> bool {
        if self.by_id.contains_key(&tx.tx_id) {
            return false;
        }
        self.by_id.insert(tx.tx_id, tx.submit_time);
        self.queue.insert((tx.submit_time, tx.tx_id), tx);
        true
    }

    /// Up to `max` transactions from the head of the queue, left in place.
    pub fn peek(&self, max: usize) -> Vec<Transaction> {
        self.queue.values().take(max).cloned().collect()
    }

    /// Drops every transaction carried by an accepted block.
    pub fn remove_included(&mut self, block: &Block) -> usize {
        block.body.iter().filter(|tx| self.remove(&tx.tx_id).is_some()).count()
    }

    pub fn remove(&mut self, tx_id: &Hash) -> Option<Transaction> {
        let t = self.by_id.remove(tx_id)?;
        self.queue.remove(&(t, *tx_id))
    }

    pub fn drain(&mut self) -> Vec<Transaction> {
        self.by_id.clear();
        std::mem::take(&mut self.queue).into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::NodeId;

    fn tx(t: u64, n: u8) -> Transaction {
        Transaction::new(NodeId::from_byte(1), vec![Hash([n; 32])], 1, t, vec![]).unwrap()
    }

    #[test]
    fn ordered_by_submit_time_then_id() {
        let mut m = Mempool::new();
        m.submit(tx(5, 1));
        m.submit(tx(1, 2));
        m.submit(tx(3, 3));
        let times: Vec<u64> = m.peek(10).iter().map(|t| t.submit_time).collect();
        assert_eq!(times, vec![1, 3, 5]);
        assert!(!m.submit(tx(5, 1)));
    }

    #[test]
    fn removed_when_included() {
        let mut m = Mempool::new();
        let a = tx(1, 1);
        let b = tx(2, 2);
        m.submit(a.clone());
        m.submit(b.clone());
        let g = Block::genesis(NodeId::default(), 0);
        let blk = Block::assemble(NodeId::default(), vec![g.block_hash], vec![a.clone()], 3, 0).unwrap();
        assert_eq!(m.remove_included(&blk), 1);
        assert_eq!(m.remove_included(&blk), 0);
        assert!(!m.contains(&a.tx_id));
        assert!(m.contains(&b.tx_id));
    }
}
