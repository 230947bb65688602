//! Session control: signed entry and exit of committee members, the `3f+1`
//! size guard and promotion from the waiting pool.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::verify;
pub use crate::crypto::KeyPair;
use crate::hash::NodeId;
use crate::ranking::default_new_rank;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScpError {
    #[error("admission rejected: {0}")]
    RejectedAdmission(String),
    #[error("node {0} already known")]
    RejectedDuplicate(NodeId),
    #[error("leave ticket rejected: {0}")]
    RejectedTicket(String),
    #[error("node {0} is not a committee member")]
    NotMember(NodeId),
    #[error("signer {0} is not the primary")]
    WrongSigner(NodeId),
    #[error("invalid committee: {0}")]
    InvalidCommittee(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryTicket {
    pub public_key: NodeId,
    #[serde(with = "crate::ledger::hex_bytes")]
    pub challenge: Vec<u8>,
    /// Signature over `challenge`, proving possession of the private key.
    #[serde(with = "crate::ledger::hex_bytes")]
    pub possession_proof: Vec<u8>,
    pub initial_rank: f64,
}

impl EntryTicket {
    pub fn proof_verifies(&self) -> bool {
        verify(self.public_key.as_bytes(), &self.challenge, &self.possession_proof)
    }

    fn bytes(&self) -> Vec<u8> {
        let mut b = b"entry".to_vec();
        b.extend_from_slice(self.public_key.as_bytes());
        b.extend_from_slice(&(self.challenge.len() as u32).to_le_bytes());
        b.extend_from_slice(&self.challenge);
        b.extend_from_slice(&self.possession_proof);
        b.extend_from_slice(&self.initial_rank.to_le_bytes());
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeaveReason {
    Voluntary,
    LowRankEviction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveTicket {
    pub public_key: NodeId,
    pub current_rank: f64,
    pub reason: LeaveReason,
    /// Signed by the leaving node (voluntary) or by the primary (eviction).
    #[serde(with = "crate::ledger::hex_bytes")]
    pub possession_proof: Vec<u8>,
}

impl LeaveTicket {
    /// The bytes covered by `possession_proof`.
    pub fn signed_message(public_key: &NodeId, rank: f64, reason: LeaveReason) -> Vec<u8> {
        let mut b = b"leave".to_vec();
        b.extend_from_slice(public_key.as_bytes());
        b.extend_from_slice(&rank.to_le_bytes());
        b.push(reason as u8);
        b
    }

    fn bytes(&self) -> Vec<u8> {
        let mut b = Self::signed_message(&self.public_key, self.current_rank, self.reason);
        b.extend_from_slice(&self.possession_proof);
        b
    }

    fn proof_verifies(&self, primary: &NodeId) -> bool {
        let signer = match self.reason {
            LeaveReason::Voluntary => &self.public_key,
            LeaveReason::LowRankEviction => primary,
        };
        let msg = Self::signed_message(&self.public_key, self.current_rank, self.reason);
        verify(signer.as_bytes(), &msg, &self.possession_proof)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ticket {
    Entry(EntryTicket),
    Leave(LeaveTicket),
}

impl Ticket {
    pub fn bytes(&self) -> Vec<u8> {
        match self {
            Ticket::Entry(t) => t.bytes(),
            Ticket::Leave(t) => t.bytes(),
        }
    }
}

/// A primary-signed confirmation of an entry or exit. Exits also carry the
/// leave ticket's own proof, so both parties' signatures are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareMessage {
    pub ticket: Ticket,
    pub primary: NodeId,
    #[serde(with = "crate::ledger::hex_bytes")]
    pub primary_signature: Vec<u8>,
}

impl PrepareMessage {
    fn new(ticket: Ticket, primary: &KeyPair) -> Self {
        let primary_signature = primary.sign(&ticket.bytes());
        PrepareMessage { ticket, primary: primary.node_id(), primary_signature }
    }

    /// Every contained signature verifies.
    pub fn verify(&self) -> bool {
        if !verify(self.primary.as_bytes(), &self.ticket.bytes(), &self.primary_signature) {
            return false;
        }
        match &self.ticket {
            Ticket::Entry(t) => t.proof_verifies(),
            Ticket::Leave(t) => t.proof_verifies(&self.primary),
        }
    }
}

/// Builds an entry ticket answering `challenge`.
pub fn request_entry<R: Rng + ?Sized>(keys: &KeyPair, challenge: &[u8], rng: &mut R) -> EntryTicket {
    EntryTicket {
        public_key: keys.node_id(),
        challenge: challenge.to_vec(),
        possession_proof: keys.sign(challenge),
        initial_rank: default_new_rank(rng),
    }
}

/// A member's own request to leave.
pub fn request_leave(committee: &CommitteeState, keys: &KeyPair, rank: f64) -> Result<LeaveTicket, ScpError> {
    let id = keys.node_id();
    if !committee.members.contains(&id) {
        return Err(ScpError::NotMember(id));
    }
    let msg = LeaveTicket::signed_message(&id, rank, LeaveReason::Voluntary);
    Ok(LeaveTicket {
        public_key: id,
        current_rank: rank,
        reason: LeaveReason::Voluntary,
        possession_proof: keys.sign(&msg),
    })
}

/// An eviction ticket for `node`, signed by the primary.
pub fn eviction_ticket(
    committee: &CommitteeState,
    primary: &KeyPair,
    node: NodeId,
    rank: f64,
) -> Result<LeaveTicket, ScpError> {
    if primary.node_id() != committee.primary {
        return Err(ScpError::WrongSigner(primary.node_id()));
    }
    if !committee.members.contains(&node) {
        return Err(ScpError::NotMember(node));
    }
    let msg = LeaveTicket::signed_message(&node, rank, LeaveReason::LowRankEviction);
    Ok(LeaveTicket {
        public_key: node,
        current_rank: rank,
        reason: LeaveReason::LowRankEviction,
        possession_proof: primary.sign(&msg),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScpEvent {
    Entry,
    Admit,
    Leave,
    Evict,
    Promote,
    JoinPhase,
    NonOperational,
}

impl ScpEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScpEvent::Entry => "entry",
            ScpEvent::Admit => "admit",
            ScpEvent::Leave => "leave",
            ScpEvent::Evict => "evict",
            ScpEvent::Promote => "promote",
            ScpEvent::JoinPhase => "join-phase",
            ScpEvent::NonOperational => "non-operational",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScpLogEntry {
    pub time: u64,
    pub event: ScpEvent,
    pub node: NodeId,
    pub committee_size: usize,
}

/// Result of [`CommitteeState::process_exit`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExitOutcome {
    pub prepare: PrepareMessage,
    pub join_phase: bool,
    pub promoted: Vec<NodeId>,
    pub new_primary: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeState {
    pub members: BTreeSet<NodeId>,
    pub primary: NodeId,
    pub f: usize,
    /// Rank-descending, node-id ascending among equal ranks.
    waiting: Vec<(NodeId, f64)>,
    pub exited: BTreeSet<NodeId>,
    pub operational: bool,
    pub join_phase: bool,
    challenges: BTreeSet<Vec<u8>>,
    log: Vec<ScpLogEntry>,
    /// Simulated seconds stamped on log lines.
    pub clock: u64,
}

impl CommitteeState {
    pub fn new(members: BTreeSet<NodeId>, primary: NodeId, f: usize) -> Result<Self, ScpError> {
        if !members.contains(&primary) {
            return Err(ScpError::InvalidCommittee("primary is not a member".into()));
        }
        let operational = members.len() > 3 * f;
        Ok(CommitteeState {
            members,
            primary,
            f,
            waiting: Vec::new(),
            exited: BTreeSet::new(),
            operational,
            join_phase: false,
            challenges: BTreeSet::new(),
            log: Vec::new(),
            clock: 0,
        })
    }

    pub fn min_size(&self) -> usize {
        3 * self.f + 1
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn waiting_pool(&self) -> &[(NodeId, f64)] {
        &self.waiting
    }

    pub fn is_waiting(&self, id: &NodeId) -> bool {
        self.waiting.iter().any(|(w, _)| w == id)
    }

    pub fn log(&self) -> &[ScpLogEntry] {
        &self.log
    }

    fn note(&mut self, event: ScpEvent, node: NodeId) {
        self.log.push(ScpLogEntry { time: self.clock, event, node, committee_size: self.members.len() });
    }

    /// A fresh challenge for an entry ticket. Each challenge is good once.
    pub fn issue_challenge<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<u8> {
        let c: [u8; 32] = rng.gen();
        self.challenges.insert(c.to_vec());
        c.to_vec()
    }

    /// Verifies the ticket and places the node in the waiting pool.
    pub fn admit(&mut self, ticket: EntryTicket, primary: &KeyPair) -> Result<PrepareMessage, ScpError> {
        if primary.node_id() != self.primary {
            return Err(ScpError::WrongSigner(primary.node_id()));
        }
        let id = ticket.public_key;
        self.note(ScpEvent::Entry, id);
        if self.members.contains(&id) || self.is_waiting(&id) || self.exited.contains(&id) {
            return Err(ScpError::RejectedDuplicate(id));
        }
        if !self.challenges.contains(&ticket.challenge) {
            return Err(ScpError::RejectedAdmission("challenge not issued or already used".into()));
        }
        if !ticket.proof_verifies() {
            return Err(ScpError::RejectedAdmission("possession proof does not verify".into()));
        }
        if !ticket.initial_rank.is_finite() {
            return Err(ScpError::RejectedAdmission("rank is not finite".into()));
        }
        self.challenges.remove(&ticket.challenge);
        let rank = ticket.initial_rank;
        let at = self.waiting.partition_point(|(w, r)| *r > rank || (*r == rank && *w < id));
        self.waiting.insert(at, (id, rank));
        self.note(ScpEvent::Admit, id);
        Ok(PrepareMessage::new(Ticket::Entry(ticket), primary))
    }

    /// Removes a member. Below `3f+1` the join phase starts and waiting nodes
    /// are promoted. If the primary leaves, the highest-ranked remaining member
    /// (by `rank_of`, node id breaking ties) takes over.
    pub fn process_exit(
        &mut self,
        ticket: LeaveTicket,
        primary: &KeyPair,
        rank_of: impl Fn(&NodeId) -> f64,
    ) -> Result<ExitOutcome, ScpError> {
        if primary.node_id() != self.primary {
            return Err(ScpError::WrongSigner(primary.node_id()));
        }
        let id = ticket.public_key;
        if !self.members.contains(&id) {
            return Err(ScpError::NotMember(id));
        }
        if !ticket.proof_verifies(&self.primary) {
            return Err(ScpError::RejectedTicket("possession proof does not verify".into()));
        }
        let event = match ticket.reason {
            LeaveReason::Voluntary => ScpEvent::Leave,
            LeaveReason::LowRankEviction => ScpEvent::Evict,
        };
        let prepare = PrepareMessage::new(Ticket::Leave(ticket), primary);
        self.members.remove(&id);
        self.exited.insert(id);
        self.note(event, id);

        let mut join_phase = false;
        let mut promoted = Vec::new();
        if self.members.len() < self.min_size() {
            join_phase = true;
            self.join_phase = true;
            self.note(ScpEvent::JoinPhase, id);
            promoted = self.promote_waiting();
        }

        let mut new_primary = None;
        if id == self.primary {
            let next = self.members.iter().max_by(|a, b| rank_of(a).total_cmp(&rank_of(b)).then(b.cmp(a))).copied();
            match next {
                Some(p) => {
                    self.primary = p;
                    new_primary = Some(p);
                }
                None => {
                    self.operational = false;
                }
            }
        }
        Ok(ExitOutcome { prepare, join_phase, promoted, new_primary })
    }

    /// Fills the committee up to `3f+1` from the waiting pool, best rank first.
    /// Waiting nodes with negative rank are dropped, never promoted.
    pub fn promote_waiting(&mut self) -> Vec<NodeId> {
        let mut promoted = Vec::new();
        while self.members.len() < self.min_size() && !self.waiting.is_empty() {
            let (id, rank) = self.waiting.remove(0);
            if rank < 0.0 {
                continue;
            }
            self.members.insert(id);
            self.note(ScpEvent::Promote, id);
            promoted.push(id);
        }
        if self.members.len() >= self.min_size() {
            self.operational = !self.members.is_empty();
            self.join_phase = false;
        } else {
            self.operational = false;
            let p = self.primary;
            self.note(ScpEvent::NonOperational, p);
        }
        promoted
    }

    /// Log lines `time,event,node_id,committee_size`.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            writeln!(out, "{},{},{},{}", e.time, e.event.as_str(), e.node.to_hex(), e.committee_size)
                .expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn keys(n: u8) -> KeyPair {
        KeyPair::from_seed([n; 32])
    }

    fn committee(n: u8, f: usize) -> (CommitteeState, Vec<KeyPair>) {
        let ks: Vec<KeyPair> = (1..=n).map(keys).collect();
        let members = ks.iter().map(|k| k.node_id()).collect();
        (CommitteeState::new(members, ks[0].node_id(), f).unwrap(), ks)
    }

    fn admit_one(
        c: &mut CommitteeState,
        primary: &KeyPair,
        k: &KeyPair,
        seed: u64,
    ) -> Result<PrepareMessage, ScpError> {
        let ch = c.issue_challenge(&mut seeded(seed));
        let t = request_entry(k, &ch, &mut seeded(seed));
        c.admit(t, primary)
    }

    #[test]
    fn entry_ticket_verifies_and_is_deterministic() {
        let k = keys(9);
        let t = request_entry(&k, b"challenge", &mut seeded(4));
        assert!(t.proof_verifies());
        assert!(t.initial_rank > 0.1 && t.initial_rank < 0.5);
        assert_eq!(t, request_entry(&k, b"challenge", &mut seeded(4)));
        let mut bad = t.clone();
        bad.possession_proof[0] ^= 1;
        assert!(!bad.proof_verifies());
    }

    #[test]
    fn admission_goes_to_waiting_pool() {
        let (mut c, ks) = committee(4, 1);
        let msg = admit_one(&mut c, &ks[0], &keys(20), 1).unwrap();
        assert!(msg.verify());
        assert_eq!(c.size(), 4);
        assert_eq!(c.waiting_pool().len(), 1);
        let before = c.clone();
        assert_eq!(admit_one(&mut c, &ks[0], &ks[2], 2).unwrap_err(), ScpError::RejectedDuplicate(ks[2].node_id()));
        assert_eq!(c.members, before.members);
        assert_eq!(c.waiting_pool(), before.waiting_pool());
    }

    #[test]
    fn tampered_proof_rejected() {
        let (mut c, ks) = committee(4, 1);
        let ch = c.issue_challenge(&mut seeded(1));
        let mut t = request_entry(&keys(30), &ch, &mut seeded(1));
        t.possession_proof[5] ^= 0x10;
        assert!(matches!(c.admit(t, &ks[0]), Err(ScpError::RejectedAdmission(_))));
        // unissued challenge
        let t = request_entry(&keys(31), b"made-up", &mut seeded(1));
        assert!(matches!(c.admit(t, &ks[0]), Err(ScpError::RejectedAdmission(_))));
    }

    #[test]
    fn exit_above_threshold_has_no_join_phase() {
        let (mut c, ks) = committee(5, 1);
        let t = request_leave(&c, &ks[4], 0.2).unwrap();
        let out = c.process_exit(t, &ks[0], |_| 0.0).unwrap();
        assert!(!out.join_phase);
        assert!(out.prepare.verify());
        assert_eq!(c.size(), 4);
        assert!(c.operational);
    }

    #[test]
    fn exit_below_threshold_promotes() {
        let (mut c, ks) = committee(4, 1);
        admit_one(&mut c, &ks[0], &keys(40), 7).unwrap();
        admit_one(&mut c, &ks[0], &keys(41), 8).unwrap();
        let best = c.waiting_pool()[0].0;
        let t = request_leave(&c, &ks[3], 0.2).unwrap();
        let out = c.process_exit(t, &ks[0], |_| 0.0).unwrap();
        assert!(out.join_phase);
        assert_eq!(out.promoted, vec![best]);
        assert_eq!(c.size(), 4);
        assert!(c.operational);
    }

    #[test]
    fn empty_pool_goes_non_operational() {
        let (mut c, ks) = committee(4, 1);
        let t = request_leave(&c, &ks[3], 0.2).unwrap();
        c.process_exit(t, &ks[0], |_| 0.0).unwrap();
        assert!(!c.operational);
        assert!(c.log().iter().any(|e| e.event == ScpEvent::NonOperational));
    }

    #[test]
    fn eviction_and_primary_succession() {
        let (mut c, ks) = committee(5, 1);
        let p = ks[0].node_id();
        let t = eviction_ticket(&c, &ks[0], p, -0.1).unwrap();
        let favourite = ks[3].node_id();
        let out = c.process_exit(t, &ks[0], |n| if *n == favourite { 0.9 } else { 0.1 }).unwrap();
        assert_eq!(out.new_primary, Some(favourite));
        assert_eq!(c.primary, favourite);
        assert!(c.exited.contains(&p) && !c.members.contains(&p));
    }

    #[test]
    fn non_member_cannot_leave() {
        let (c, _) = committee(4, 1);
        assert_eq!(request_leave(&c, &keys(77), 0.1).unwrap_err(), ScpError::NotMember(keys(77).node_id()));
    }

    #[test]
    fn promotion_skips_negative_rank() {
        let (mut c, ks) = committee(4, 1);
        let ch = c.issue_challenge(&mut seeded(3));
        let mut t = request_entry(&keys(50), &ch, &mut seeded(3));
        t.initial_rank = -0.2;
        c.admit(t, &ks[0]).unwrap();
        let leave = request_leave(&c, &ks[1], 0.1).unwrap();
        let out = c.process_exit(leave, &ks[0], |_| 0.0).unwrap();
        assert!(out.promoted.is_empty());
        assert!(!c.members.contains(&keys(50).node_id()));
        assert!(!c.operational);
    }

    #[test]
    fn log_lines() {
        let (mut c, ks) = committee(4, 1);
        c.clock = 12;
        admit_one(&mut c, &ks[0], &keys(60), 1).unwrap();
        let text = c.export_log();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("12,entry,"));
        assert!(lines[1].starts_with("12,admit,"));
        assert!(lines[1].ends_with(",4"));
    }
}
