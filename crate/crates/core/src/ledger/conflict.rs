use std::collections::{BTreeSet, HashMap, HashSet};

use super::{BlockOrder, DagLedger, Transaction};
use crate::hash::Hash;

/// Two transactions spending the same input. The one earlier in ledger order
/// wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conflict {
    pub input: Hash,
    pub winner: Hash,
    pub loser: Hash,
    pub winner_block: Hash,
    pub loser_block: Hash,
    /// Both transactions sit in U-layer blocks, so the outcome may still change.
    pub provisional: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn losers(&self) -> BTreeSet<Hash> {
        self.conflicts.iter().map(|c| c.loser).collect()
    }
}

/// Scans transactions in ledger order. A transaction that tries to spend an
/// input already spent by an earlier, different transaction loses and spends
/// nothing. A transaction included in several blocks counts once, at its first
/// occurrence.
pub fn detect_double_spend(ledger: &DagLedger, order: &BlockOrder) -> ConflictReport {
    let mut seen: HashSet<Hash> = HashSet::new();
    // input -> (tx, block, confirmed)
    let mut spent: HashMap<Hash, (Hash, Hash, bool)> = HashMap::new();
    let mut pairs: HashSet<(Hash, Hash)> = HashSet::new();
    let mut report = ConflictReport::default();

    for (block, confirmed, tx) in order.transactions(ledger) {
        if !seen.insert(tx.tx_id) {
            continue;
        }
        let clashes: Vec<(Hash, (Hash, Hash, bool))> =
            tx.inputs.iter().filter_map(|i| spent.get(i).map(|prev| (*i, *prev))).collect();
        if clashes.is_empty() {
            for i in &tx.inputs {
                spent.insert(*i, (tx.tx_id, block, confirmed));
            }
            continue;
        }
        for (input, (winner, winner_block, winner_confirmed)) in clashes {
            if pairs.insert((winner, tx.tx_id)) {
                report.conflicts.push(Conflict {
                    input,
                    winner,
                    loser: tx.tx_id,
                    winner_block,
                    loser_block: block,
                    provisional: !winner_confirmed && !confirmed,
                });
            }
        }
    }
    report
}

/// Transactions in confirmed positions: confirmed blocks only, first
/// occurrence only, conflict losers removed.
pub fn effective_transactions<'a>(
    ledger: &'a DagLedger,
    order: &'a BlockOrder,
    report: &ConflictReport,
) -> Vec<(Hash, &'a Transaction)> {
    let losers = report.losers();
    let mut seen = HashSet::new();
    order
        .transactions(ledger)
        .filter(|(_, confirmed, tx)| *confirmed && !losers.contains(&tx.tx_id) && seen.insert(tx.tx_id))
        .map(|(b, _, tx)| (b, tx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::NodeId;
    use crate::ledger::{classify_layers, order_blocks, Block};

    fn tx(sender: u8, input: u8) -> Transaction {
        Transaction::new(NodeId::from_byte(sender), vec![Hash([input; 32])], 1, 0, vec![]).unwrap()
    }

    fn ledger_with(bodies: Vec<Vec<Transaction>>) -> DagLedger {
        // genesis, then parallel blocks, then one block confirming all of them
        let mut l = DagLedger::new();
        let g = Block::genesis(NodeId::default(), 0);
        l.insert_block(g.clone()).unwrap();
        let gt = [g.block_hash].into_iter().collect();
        for (i, body) in bodies.into_iter().enumerate() {
            let b = l.create_block(NodeId::from_byte(i as u8), &gt, body, 1, i as u64).unwrap();
            l.insert_block(b).unwrap();
        }
        let tips = l.tips().clone();
        let top = l.create_block(NodeId::from_byte(99), &tips, vec![tx(99, 99)], 2, 0).unwrap();
        l.insert_block(top).unwrap();
        l
    }

    #[test]
    fn no_shared_inputs_no_conflicts() {
        let l = ledger_with(vec![vec![tx(1, 1)], vec![tx(2, 2)]]);
        let o = order_blocks(&l, &classify_layers(&l, 1)).unwrap();
        assert!(detect_double_spend(&l, &o).is_empty());
    }

    #[test]
    fn parallel_double_spend_has_single_winner() {
        let a = tx(1, 7);
        let b = tx(2, 7);
        let l = ledger_with(vec![vec![a.clone()], vec![b.clone()]]);
        let o = order_blocks(&l, &classify_layers(&l, 1)).unwrap();
        let r = detect_double_spend(&l, &o);
        assert_eq!(r.conflicts.len(), 1);
        let c = &r.conflicts[0];
        // the winner is whichever appears first in the ordered tx list
        let first = o.transactions(&l).find(|(_, _, t)| t.tx_id == a.tx_id || t.tx_id == b.tx_id).unwrap().2.tx_id;
        assert_eq!(c.winner, first);
        assert!(!c.provisional);
        let eff = effective_transactions(&l, &o, &r);
        let ids: Vec<Hash> = eff.iter().map(|(_, t)| t.tx_id).collect();
        assert!(ids.contains(&c.winner) && !ids.contains(&c.loser));
    }

    #[test]
    fn duplicate_inclusion_is_not_a_conflict() {
        let a = tx(1, 7);
        let l = ledger_with(vec![vec![a.clone()], vec![a.clone()]]);
        let o = order_blocks(&l, &classify_layers(&l, 1)).unwrap();
        assert!(detect_double_spend(&l, &o).is_empty());
        let eff = effective_transactions(&l, &o, &ConflictReport::default());
        assert_eq!(eff.iter().filter(|(_, t)| t.tx_id == a.tx_id).count(), 1);
    }

    #[test]
    fn unconfirmed_conflict_is_provisional() {
        let l = ledger_with(vec![vec![tx(1, 7)], vec![tx(2, 7)]]);
        let o = order_blocks(&l, &classify_layers(&l, 5)).unwrap();
        let r = detect_double_spend(&l, &o);
        assert_eq!(r.conflicts.len(), 1);
        assert!(r.conflicts[0].provisional);
    }
}
