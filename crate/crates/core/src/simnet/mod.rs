//! Deterministic discrete-event network: an ordered event queue, link delay
//! models, broadcast, and Byzantine behavior injection.

mod adversary;
mod delay;
mod queue;

pub use adversary::{apply_adversary, corrupt_signature, AdversaryProfile, Audience, Behavior, PlannedBlock, SlotPlan};
pub use delay::{DelayKind, DelayModel};
pub use queue::{
    export_trace, run_until, secs_to_us, Destination, EventKind, EventQueue, Handler, Payload, SimEvent, SimTime,
    TraceRecord, MICROS,
};

use rand::Rng;

use crate::hash::NodeId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("event at {fire_time}us is before the current time {now}us")]
    PastEvent { fire_time: SimTime, now: SimTime },
    #[error("invalid delay model: {0}")]
    InvalidDelay(String),
}

/// Schedules one delivery to every node in `nodes` except `from`, each with an
/// independently sampled delay. Returns the scheduled sequence numbers.
#[allow(clippy::too_many_arguments)]
pub fn broadcast<P: Clone, R: Rng + ?Sized>(
    queue: &mut EventQueue<P>,
    kind: EventKind,
    from: NodeId,
    nodes: &[NodeId],
    payload: &P,
    delays: &DelayModel,
    adversarial: bool,
    rng: &mut R,
) -> Vec<u64> {
    let now = queue.now();
    nodes
        .iter()
        .filter(|n| **n != from)
        .map(|to| {
            let at = now + delays.sample(&from, to, rng);
            queue
                .schedule(at, kind, from, Destination::Node(*to), adversarial, payload.clone())
                .expect("delays are non-negative")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::Hash;
    use crate::rng::seeded;

    #[test]
    fn broadcast_skips_sender() {
        let mut q: EventQueue<Hash> = EventQueue::new();
        let nodes: Vec<NodeId> = (0..5).map(NodeId::from_byte).collect();
        let seqs = broadcast(
            &mut q,
            EventKind::DeliverBlock,
            nodes[0],
            &nodes,
            &Hash::ZERO,
            &DelayModel::new(DelayKind::Fixed { secs: 2.0 }),
            false,
            &mut seeded(0),
        );
        assert_eq!(seqs.len(), 4);
        while let Some(ev) = q.pop() {
            assert_eq!(ev.fire_time, 2_000_000);
            assert_ne!(ev.to, Destination::Node(nodes[0]));
        }
    }
}
