#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use adr_core::ledger::{Block, Transaction};
use adr_core::ranking::EndorsementGraph;
use adr_core::{Hash, NodeId};
use sha2::{Digest, Sha256};

pub fn dsha(b: &[u8]) -> [u8; 32] {
    Sha256::digest(Sha256::digest(b)).into()
}

pub fn unhex32(s: &str) -> [u8; 32] {
    hex::decode(s).unwrap().try_into().unwrap()
}

/// Rebuilds every fixture case with the library and returns a description of
/// each field that differs from the committed value.
pub fn golden_mismatches() -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden.json");
    let cases: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut bad = Vec::new();
    for (i, c) in cases.as_array().unwrap().iter().enumerate() {
        let mut txs = Vec::new();
        for t in c["txs"].as_array().unwrap() {
            let inputs = t["inputs"].as_array().unwrap().iter().map(|h| Hash(unhex32(h.as_str().unwrap()))).collect();
            let tx = Transaction::new(
                NodeId(unhex32(t["sender"].as_str().unwrap())),
                inputs,
                t["payload_size"].as_u64().unwrap() as u32,
                t["submit_time"].as_u64().unwrap(),
                hex::decode(t["signature"].as_str().unwrap()).unwrap(),
            )
            .unwrap();
            if tx.tx_id.to_hex() != t["tx_id"].as_str().unwrap() {
                bad.push(format!("case {i}: tx_id {}", tx.tx_id));
            }
            txs.push(tx);
        }
        let parents = c["parents"].as_array().unwrap().iter().map(|h| Hash(unhex32(h.as_str().unwrap()))).collect();
        let b = Block::assemble(
            NodeId(unhex32(c["producer"].as_str().unwrap())),
            parents,
            txs,
            c["timestamp"].as_u64().unwrap(),
            c["nonce"].as_u64().unwrap(),
        )
        .unwrap();
        if b.header.merkle_root.to_hex() != c["merkle_root"].as_str().unwrap() {
            bad.push(format!("case {i}: merkle_root"));
        }
        if hex::encode(b.header.canonical_bytes().unwrap()) != c["header_bytes"].as_str().unwrap() {
            bad.push(format!("case {i}: header bytes"));
        }
        if b.block_hash.to_hex() != c["block_hash"].as_str().unwrap() {
            bad.push(format!("case {i}: block_hash"));
        }
    }
    bad
}

/// Every DAG with at most `max_n` blocks, built one block at a time where
/// each new block takes a non-empty antichain of earlier blocks as parents.
/// `visit` receives the parent lists by block index; block 0 is genesis.
pub fn for_each_dag(max_n: usize, visit: &mut dyn FnMut(&[Vec<usize>])) {
    fn rec(parents: &mut Vec<Vec<usize>>, anc: &mut Vec<u64>, max_n: usize, visit: &mut dyn FnMut(&[Vec<usize>])) {
        visit(parents);
        let m = parents.len();
        if m == max_n {
            return;
        }
        for mask in 1u64..(1 << m) {
            let set: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            let antichain = set.iter().all(|&a| set.iter().all(|&b| a == b || anc[b] >> a & 1 == 0));
            if !antichain {
                continue;
            }
            let a = set.iter().fold(1u64 << m, |acc, &p| acc | anc[p]);
            parents.push(set);
            anc.push(a);
            rec(parents, anc, max_n, visit);
            parents.pop();
            anc.pop();
        }
    }
    let mut parents = vec![Vec::new()];
    let mut anc = vec![1u64];
    rec(&mut parents, &mut anc, max_n, visit);
}

/// Assembles blocks for a DAG shape. `tag` varies the hashes between shapes.
pub fn build_blocks(shape: &[Vec<usize>], tag: u64) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(shape.len());
    for (i, ps) in shape.iter().enumerate() {
        let parents = ps.iter().map(|&p| blocks[p].block_hash).collect();
        let producer = NodeId::from_byte(i as u8);
        let body = if ps.is_empty() {
            Vec::new()
        } else {
            vec![Transaction::new(producer, vec![Hash([i as u8; 32])], 1, tag, Vec::new()).unwrap()]
        };
        let b = Block::assemble(producer, parents, body, tag, i as u64).unwrap();
        blocks.push(b);
    }
    blocks
}

/// The lexicographically smallest hash sequence over all topological orders,
/// found by enumerating every one of them.
pub fn brute_force_order(hashes: &[Hash], shape: &[Vec<usize>]) -> Vec<Hash> {
    fn rec(
        hashes: &[Hash],
        shape: &[Vec<usize>],
        placed: &mut Vec<bool>,
        cur: &mut Vec<Hash>,
        best: &mut Option<Vec<Hash>>,
    ) {
        if cur.len() == hashes.len() {
            if best.as_ref().is_none_or(|b| *cur < *b) {
                *best = Some(cur.clone());
            }
            return;
        }
        for i in 0..hashes.len() {
            if !placed[i] && shape[i].iter().all(|&p| placed[p]) {
                placed[i] = true;
                cur.push(hashes[i]);
                rec(hashes, shape, placed, cur, best);
                cur.pop();
                placed[i] = false;
            }
        }
    }
    let mut best = None;
    rec(hashes, shape, &mut vec![false; hashes.len()], &mut Vec::new(), &mut best);
    best.unwrap()
}

/// Number of distinct descendants of each block, by explicit reachability.
pub fn brute_force_descendants(shape: &[Vec<usize>]) -> Vec<usize> {
    let n = shape.len();
    (0..n)
        .map(|a| {
            (0..n)
                .filter(|&d| {
                    let mut stack = vec![d];
                    let mut seen = BTreeSet::new();
                    while let Some(x) = stack.pop() {
                        for &p in &shape[x] {
                            if p == a {
                                return true;
                            }
                            if seen.insert(p) {
                                stack.push(p);
                            }
                        }
                    }
                    false
                })
                .count()
        })
        .collect()
}

/// Dense power iteration with the same update rule as the library's link
/// rank, used as an independent oracle.
pub fn dense_link_rank(g: &EndorsementGraph, i: f64, iterations: usize) -> BTreeMap<NodeId, f64> {
    let ids: Vec<NodeId> = g.nodes().copied().collect();
    let n = ids.len();
    let mut m = vec![vec![0.0; n]; n];
    for (b, from) in ids.iter().enumerate() {
        let outs = g.outbound(from).unwrap();
        for to in outs {
            let a = ids.iter().position(|x| x == to).unwrap();
            m[a][b] = 1.0 / outs.len() as f64;
        }
    }
    let mut r = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let mut s: Vec<f64> = (0..n)
            .map(|a| {
                if m[a].iter().all(|w| *w == 0.0) {
                    1.0 / (10.0 * n as f64)
                } else {
                    (0..n).map(|b| m[a][b] * r[b]).sum()
                }
            })
            .collect();
        let scale = i / (1.0 - i);
        s.iter_mut().for_each(|v| *v *= scale);
        let total: f64 = s.iter().sum();
        r = s.into_iter().map(|v| v / total).collect();
    }
    ids.into_iter().zip(r).collect()
}
