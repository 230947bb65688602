use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::hash::{Hash, NodeId};

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const MICROS: u64 = 1_000_000;

pub fn secs_to_us(s: f64) -> SimTime {
    (s * MICROS as f64).round().max(0.0) as SimTime
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    DeliverBlock,
    DeliverTx,
    ScpMessage,
    DigestExchange,
    ProducerTimeout,
    /// A producer's scheduled block-creation moment.
    ProduceBlock,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::DeliverBlock => "deliver-block",
            EventKind::DeliverTx => "deliver-tx",
            EventKind::ScpMessage => "scp-message",
            EventKind::DigestExchange => "digest-exchange",
            EventKind::ProducerTimeout => "producer-timeout",
            EventKind::ProduceBlock => "produce-block",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

/// Anything carried by an event. The digest identifies it in traces.
pub trait Payload {
    fn digest(&self) -> Hash;
}

impl Payload for Hash {
    fn digest(&self) -> Hash {
        *self
    }
}

#[derive(Clone, Debug)]
pub struct SimEvent<P> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
    pub from: NodeId,
    pub to: Destination,
    /// Originated by an adversary profile.
    pub adversarial: bool,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.sequence == other.sequence
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed, so the BinaryHeap pops the earliest event
impl<P> Ord for SimEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_time, other.sequence).cmp(&(self.fire_time, self.sequence))
    }
}

/// Dispatches events in `(fire_time, sequence)` order.
#[derive(Clone, Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<SimEvent<P>>,
    now: SimTime,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: 0, next_seq: 0 }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events scheduled so far.
    pub fn scheduled(&self) -> u64 {
        self.next_seq
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_time)
    }

    pub fn schedule(
        &mut self,
        fire_time: SimTime,
        kind: EventKind,
        from: NodeId,
        to: Destination,
        adversarial: bool,
        payload: P,
    ) -> Result<u64, SimError> {
        if fire_time < self.now {
            return Err(SimError::PastEvent { fire_time, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { fire_time, sequence, kind, from, to, adversarial, payload });
        Ok(sequence)
    }

    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        let ev = self.heap.pop()?;
        self.now = ev.fire_time;
        Some(ev)
    }

    /// Moves the clock forward without dispatching. Never moves it back.
    pub fn advance_to(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub fire_time_us: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
    pub from: NodeId,
    pub to: Option<NodeId>,
    pub payload_digest: Hash,
    pub adversarial: bool,
}

impl TraceRecord {
    pub fn of<P: Payload>(ev: &SimEvent<P>) -> Self {
        TraceRecord {
            fire_time_us: ev.fire_time,
            sequence: ev.sequence,
            kind: ev.kind,
            from: ev.from,
            to: match ev.to {
                Destination::Node(n) => Some(n),
                Destination::Broadcast => None,
            },
            payload_digest: ev.payload.digest(),
            adversarial: ev.adversarial,
        }
    }
}

/// Lines `fire_time_us,sequence,kind,from,to,payload_digest`.
pub fn export_trace(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        let to = r.to.map_or_else(|| "broadcast".to_string(), |n| n.to_hex());
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fire_time_us,
            r.sequence,
            r.kind.as_str(),
            r.from.to_hex(),
            to,
            r.payload_digest.to_hex()
        )
        .expect("write to string");
    }
    out
}

/// Receives dispatched events and may schedule more.
pub trait Handler<P> {
    fn handle(&mut self, event: SimEvent<P>, queue: &mut EventQueue<P>);
}

/// Dispatches every event with `fire_time <= t_end`, returning the trace.
/// The clock finishes at `t_end` or the last dispatched event, whichever is
/// later.
pub fn run_until<P: Payload, H: Handler<P>>(
    queue: &mut EventQueue<P>,
    world: &mut H,
    t_end: SimTime,
) -> Vec<TraceRecord> {
    let mut trace = Vec::new();
    while queue.peek_time().is_some_and(|t| t <= t_end) {
        let ev = queue.pop().expect("peeked");
        trace.push(TraceRecord::of(&ev));
        world.handle(ev, queue);
    }
    queue.advance_to(t_end);
    trace
}
