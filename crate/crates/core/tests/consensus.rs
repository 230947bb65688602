use std::collections::{BTreeMap, BTreeSet};

use adr_core::consensus::{
    elect_producers, liveness_ratio, quorum_size, verify_consistency, NodePopulation, StateDigest, World, WorldSpec,
};
use adr_core::ranking::{NodeStatus, RankParams, RankingTable};
use adr_core::rng::seeded;
use adr_core::scp::CommitteeState;
use adr_core::simnet::{Behavior, EventKind};
use adr_core::{Hash, NodeId};
use proptest::prelude::*;

fn committee_of(ranks: &[f64]) -> (RankingTable, CommitteeState) {
    let ids: BTreeSet<NodeId> = (0..ranks.len() as u8).map(NodeId::from_byte).collect();
    let mut t = RankingTable::empty(RankParams::default()).unwrap();
    for (i, r) in ranks.iter().enumerate() {
        t.insert_with_rank(NodeId::from_byte(i as u8), vec![], *r, 0, NodeStatus::Consensus).unwrap();
    }
    let c = CommitteeState::new(ids, NodeId::from_byte(0), 0).unwrap();
    (t, c)
}

#[test]
fn single_pick_frequencies_follow_scores() {
    let ranks = [0.9, 0.5, 0.3, 0.1, 0.05, -0.2];
    let (t, c) = committee_of(&ranks);
    let mut rng = seeded(77);
    let trials = 10_000;
    let mut hits: BTreeMap<NodeId, usize> = BTreeMap::new();
    for _ in 0..trials {
        let p = elect_producers(&t, &c, 1, &mut rng).unwrap();
        *hits.entry(p[0]).or_default() += 1;
    }
    let eligible: Vec<NodeId> = (0..5u8).map(NodeId::from_byte).collect();
    let total: f64 = eligible.iter().map(|id| t.score(id).unwrap()).sum();
    for id in &eligible {
        let p = t.score(id).unwrap() / total;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let got = hits.get(id).copied().unwrap_or(0) as f64;
        assert!((got - trials as f64 * p).abs() <= 3.0 * sigma, "{id}: {got} vs {}", trials as f64 * p);
    }
    assert!(!hits.contains_key(&NodeId::from_byte(5)));
}

proptest! {
    #[test]
    fn election_skips_non_positive_ranks(ranks in prop::collection::vec(-1.0f64..1.0, 1..15), count in 1usize..10, seed in any::<u64>()) {
        let (t, c) = committee_of(&ranks);
        match elect_producers(&t, &c, count, &mut seeded(seed)) {
            Ok(ps) => {
                let set: BTreeSet<_> = ps.iter().collect();
                prop_assert_eq!(set.len(), ps.len());
                prop_assert!(ps.len() <= count);
                prop_assert!(ps.iter().all(|id| t.rank(id).unwrap() > 0.0));
            }
            Err(_) => prop_assert!(ranks.iter().all(|r| *r <= 0.0)),
        }
    }

    #[test]
    fn verdict_agrees_with_a_direct_count(groups in prop::collection::vec(0u8..3, 1..20), theta in 0.0f64..0.34) {
        let digests: Vec<StateDigest> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| StateDigest { node_id: NodeId::from_byte(i as u8), epoch: 1, ledger_hash: Hash([*g; 32]) })
            .collect();
        let n = digests.len();
        let q = quorum_size(theta, n);
        let v = verify_consistency(&digests, theta, n).unwrap();
        let best = (0..3u8).map(|g| (groups.iter().filter(|x| **x == g).count(), g)).max().unwrap();
        prop_assert_eq!(v.is_consistent(), best.0 >= q);
        if let Some(h) = v.agreed_hash() {
            prop_assert_eq!(h, Hash([best.1; 32]));
            let outside: BTreeSet<NodeId> = digests.iter().filter(|d| d.ledger_hash != h).map(|d| d.node_id).collect();
            prop_assert_eq!(v.flagged(), outside);
        }
    }
}

#[test]
fn liveness_flag_matches_hand_table() {
    // largest tolerated malicious count for n = 1..=12
    let max_m = [0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4];
    for n in 1..=12usize {
        for m in 0..=n {
            let honest = (0..(n - m) as u8).map(NodeId::from_byte).collect();
            let bad = (100..100 + m as u8).map(NodeId::from_byte).collect();
            let l = liveness_ratio(&NodePopulation::new(honest, bad).unwrap()).unwrap();
            assert_eq!(l.live, m <= max_m[n - 1], "m={m} n={n}");
            assert_eq!(l.theta, m as f64 / n as f64);
        }
    }
}

#[test]
fn same_spec_gives_same_world() {
    let mut spec = WorldSpec::new(5, 10);
    spec.adversaries.insert(3, [Behavior::Equivocate].into_iter().collect());
    let (mut a, mut b) = (World::new(&spec).unwrap(), World::new(&spec).unwrap());
    a.run(3).unwrap();
    b.run(3).unwrap();
    assert_eq!(a.metrics(), b.metrics());
    assert_eq!(a.trace(), b.trace());
    assert_eq!(a.export_ledger(0), b.export_ledger(0));
    assert_eq!(a.table(), b.table());
}

#[test]
fn honest_network_grows_and_agrees_every_epoch() {
    for seed in 0..5 {
        let mut w = World::new(&WorldSpec::new(seed, 16)).unwrap();
        let mut last = 0;
        for _ in 0..6 {
            let m = w.step_epoch().unwrap();
            assert_eq!(m.consistency, "consistent", "seed {seed} epoch {}", m.epoch);
            assert!(m.dissenters.is_empty());
            assert!(m.confirmed_blocks > last);
            assert_eq!(m.conflicts + m.equivocations, 0);
            last = m.confirmed_blocks;
        }
        assert!(w.committee().operational);
        assert!(w.table().records().all(|r| r.rank > 0.0));
    }
}

#[test]
fn detected_conflicts_cost_rank_within_the_epoch() {
    let mut checked = 0;
    for seed in 0..10 {
        let mut spec = WorldSpec::new(300 + seed, 12);
        spec.initial_rank = Some(0.5);
        spec.adversaries.insert(2, [Behavior::DoubleSpend].into_iter().collect());
        let mut w = World::new(&spec).unwrap();
        let bad = w.node_ids()[2];
        for _ in 0..6 {
            let before = w.table().get(&bad).map(|r| (r.rank, r.misbehavior_count));
            let Ok(m) = w.step_epoch() else { break };
            let (Some((rank0, mis0)), Some(after)) = (before, w.table().get(&bad)) else { break };
            if m.conflicts > 0 && after.misbehavior_count > mis0 {
                assert!(after.rank < rank0, "seed {seed} epoch {}", m.epoch);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn negative_rank_leads_to_eviction_within_one_epoch() {
    let mut spec = WorldSpec::new(8, 12);
    spec.initial_rank = Some(0.06);
    spec.adversaries.insert(5, [Behavior::DoubleSpend, Behavior::Equivocate].into_iter().collect());
    let mut w = World::new(&spec).unwrap();
    let bad = w.node_ids()[5];
    for _ in 0..6 {
        if w.step_epoch().is_err() {
            break;
        }
        if w.table().rank(&bad).is_some_and(|r| r < 0.0) {
            assert!(!w.committee().members.contains(&bad));
            assert!(w.committee().exited.contains(&bad));
        }
    }
    assert!(w.committee().exited.contains(&bad));
}

#[test]
fn withholding_node_never_ships_a_block() {
    let mut spec = WorldSpec::new(12, 10);
    spec.adversaries.insert(4, [Behavior::WithholdBlocks].into_iter().collect());
    let mut w = World::new(&spec).unwrap();
    w.run(3).unwrap();
    let bad = w.node_ids()[4];
    assert!(!w.trace().iter().any(|r| r.kind == EventKind::DeliverBlock && r.from == bad));
    for i in (0..10).filter(|i| *i != 4) {
        assert!(w.ledger(i).blocks().all(|b| b.producer() != bad));
    }
}

#[test]
fn garbage_signatures_are_all_rejected() {
    let mut spec = WorldSpec::new(13, 10);
    spec.adversaries.insert(6, [Behavior::GarbageSignature].into_iter().collect());
    let mut w = World::new(&spec).unwrap();
    w.run(3).unwrap();
    let bad = w.node_ids()[6];
    let sent = w.trace().iter().filter(|r| r.kind == EventKind::DeliverBlock && r.from == bad && r.adversarial).count();
    let rejected: u64 = w.metrics().iter().map(|m| m.rejected_messages).sum();
    assert!(sent > 0);
    assert_eq!(rejected as usize, sent);
    for i in (0..10).filter(|i| *i != 6) {
        assert!(w.ledger(i).blocks().all(|b| b.producer() != bad));
    }
}

#[test]
fn corrupted_digest_is_flagged() {
    let mut w = World::new(&WorldSpec::new(14, 10)).unwrap();
    w.corrupt_digest(2, 7);
    w.run(3).unwrap();
    let m = w.metrics();
    assert!(m[0].dissenters.is_empty());
    assert_eq!(m[1].dissenters, vec![w.node_ids()[7]]);
    assert_eq!(m[1].consistency, "consistent");
    assert!(m[2].dissenters.is_empty());
}

#[test]
fn epoch_metrics_recompute_from_samples() {
    let mut w = World::new(&WorldSpec::new(15, 12)).unwrap();
    w.run(5).unwrap();
    let span = w.config.epoch_length as f64;
    let mut seen = 0;
    for m in w.metrics() {
        assert!((m.tps - m.confirmed_txs as f64 / span).abs() < 1e-12);
        let lat = &w.latencies()[seen..seen + m.confirmed_txs];
        if let Some(mean) = m.mean_latency {
            assert!((mean - lat.iter().sum::<f64>() / lat.len() as f64).abs() < 1e-9);
        }
        seen += m.confirmed_txs;
    }
    assert_eq!(seen, w.latencies().len());
    assert_eq!(seen, w.confirmed_txs().len());
    assert!(w.latencies().iter().all(|l| *l >= 0.0));
}
