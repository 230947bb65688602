use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::KeyPair;
use crate::hash::{Hash, NodeId};
use crate::ledger::Transaction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    DoubleSpend,
    WithholdBlocks,
    Equivocate,
    GarbageSignature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryProfile {
    pub node: NodeId,
    pub behaviors: BTreeSet<Behavior>,
}

impl AdversaryProfile {
    pub fn new(node: NodeId, behaviors: impl IntoIterator<Item = Behavior>) -> Self {
        AdversaryProfile { node, behaviors: behaviors.into_iter().collect() }
    }

    pub fn has(&self, b: Behavior) -> bool {
        self.behaviors.contains(&b)
    }
}

/// Which peers receive a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Audience {
    All,
    /// Kept by the producer, sent to nobody.
    LocalOnly,
    /// One half of the peers, split by position: `0` gets even positions,
    /// `1` odd ones.
    Half(u8),
}

/// What an honest producer is about to do in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPlan {
    pub txs: Vec<Transaction>,
    pub nonce: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedBlock {
    pub txs: Vec<Transaction>,
    pub nonce: u64,
    pub audience: Audience,
    pub corrupt_signature: bool,
    pub adversarial: bool,
}

/// Rewrites an honest slot plan according to the profile. Without a profile,
/// or with a profile for another node, the plan passes through unchanged.
///
/// - double-spend: two blocks, each with its own transaction spending one
///   fresh input, sent to opposite halves of the network
/// - equivocate: two distinct blocks for the slot, both sent to everyone
/// - withhold: nothing is sent
/// - garbage-signature: the message signature is corrupted
pub fn apply_adversary<R: Rng + ?Sized>(
    profile: Option<&AdversaryProfile>,
    plan: SlotPlan,
    keys: &KeyPair,
    now_secs: u64,
    rng: &mut R,
) -> Vec<PlannedBlock> {
    let Some(p) = profile.filter(|p| p.node == keys.node_id() && !p.behaviors.is_empty()) else {
        return vec![PlannedBlock {
            txs: plan.txs,
            nonce: plan.nonce,
            audience: Audience::All,
            corrupt_signature: false,
            adversarial: false,
        }];
    };

    let mut blocks: Vec<(Vec<Transaction>, u64, Audience)> = if p.has(Behavior::DoubleSpend) {
        let input = Hash(rng.gen());
        let a = Transaction::signed(keys, vec![input], 64, now_secs).expect("single input");
        let b = Transaction::signed(keys, vec![input], 65, now_secs).expect("single input");
        let mut first = vec![a];
        first.extend(plan.txs);
        let split = !p.has(Behavior::Equivocate);
        let (aud_a, aud_b) =
            if split { (Audience::Half(0), Audience::Half(1)) } else { (Audience::All, Audience::All) };
        vec![(first, plan.nonce, aud_a), (vec![b], plan.nonce ^ (1 << 63), aud_b)]
    } else if p.has(Behavior::Equivocate) && !plan.txs.is_empty() {
        vec![(plan.txs.clone(), plan.nonce, Audience::All), (plan.txs, plan.nonce ^ (1 << 63), Audience::All)]
    } else {
        vec![(plan.txs, plan.nonce, Audience::All)]
    };

    if p.has(Behavior::WithholdBlocks) {
        for b in blocks.iter_mut() {
            b.2 = Audience::LocalOnly;
        }
    }
    let corrupt = p.has(Behavior::GarbageSignature);
    blocks
        .drain(..)
        .filter(|(txs, _, _)| !txs.is_empty())
        .map(|(txs, nonce, audience)| PlannedBlock {
            txs,
            nonce,
            audience,
            corrupt_signature: corrupt,
            adversarial: true,
        })
        .collect()
}

/// Flips bits so the signature no longer verifies.
pub fn corrupt_signature(sig: &mut [u8]) {
    if let Some(b) = sig.first_mut() {
        *b ^= 0xff;
    }
    if let Some(b) = sig.last_mut() {
        *b ^= 0x5a;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn plan(k: &KeyPair) -> SlotPlan {
        let tx = Transaction::signed(k, vec![Hash([1; 32])], 10, 0).unwrap();
        SlotPlan { txs: vec![tx], nonce: 3 }
    }

    #[test]
    fn honest_passthrough() {
        let k = KeyPair::from_seed([1; 32]);
        let out = apply_adversary(None, plan(&k), &k, 0, &mut seeded(0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].audience, Audience::All);
        assert!(!out[0].adversarial);
    }

    #[test]
    fn double_spend_shares_an_input() {
        let k = KeyPair::from_seed([1; 32]);
        let p = AdversaryProfile::new(k.node_id(), [Behavior::DoubleSpend]);
        let out = apply_adversary(Some(&p), plan(&k), &k, 0, &mut seeded(0));
        assert_eq!(out.len(), 2);
        let a = &out[0].txs[0];
        let b = &out[1].txs[0];
        assert_ne!(a.tx_id, b.tx_id);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!((out[0].audience, out[1].audience), (Audience::Half(0), Audience::Half(1)));
    }

    #[test]
    fn withhold_and_garbage() {
        let k = KeyPair::from_seed([1; 32]);
        let p = AdversaryProfile::new(k.node_id(), [Behavior::WithholdBlocks]);
        let out = apply_adversary(Some(&p), plan(&k), &k, 0, &mut seeded(0));
        assert!(out.iter().all(|b| b.audience == Audience::LocalOnly));
        let p = AdversaryProfile::new(k.node_id(), [Behavior::GarbageSignature]);
        let out = apply_adversary(Some(&p), plan(&k), &k, 0, &mut seeded(0));
        assert!(out[0].corrupt_signature);
    }

    #[test]
    fn equivocation_gives_two_blocks() {
        let k = KeyPair::from_seed([1; 32]);
        let p = AdversaryProfile::new(k.node_id(), [Behavior::Equivocate]);
        let out = apply_adversary(Some(&p), plan(&k), &k, 0, &mut seeded(0));
        assert_eq!(out.len(), 2);
        assert_ne!(out[0].nonce, out[1].nonce);
    }
}
