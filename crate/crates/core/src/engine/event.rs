use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::topology::{NodeId, Port};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    TopologyTick,
    TableRebuild,
    TxComplete { node: NodeId, port: Port, generation: u64 },
    /// A packet reaches `node` after propagation.
    PacketArrival { packet: u32, node: NodeId },
    /// Next packet of a flow is created at its source.
    Generate { flow: u32 },
    MetricsFlush,
}

impl EventKind {
    /// Same-time ordering: topology first, so decisions never see a stale
    /// graph, then table, service completions, arrivals, and the final flush.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::TopologyTick => 0,
            EventKind::TableRebuild => 1,
            EventKind::TxComplete { .. } => 2,
            EventKind::PacketArrival { .. } | EventKind::Generate { .. } => 3,
            EventKind::MetricsFlush => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_s
            .total_cmp(&self.time_s)
            .then_with(|| other.kind.priority().cmp(&self.kind.priority()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    processed: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, time_s: f64, kind: EventKind) {
        debug_assert!(time_s >= self.now, "event scheduled in the past");
        self.heap.push(Event {
            time_s,
            kind,
            seq: self.seq,
        });
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?;
        assert!(ev.time_s >= self.now, "clock went backwards: {} < {}", ev.time_s, self.now);
        self.now = ev.time_s;
        self.processed += 1;
        Some(ev)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_priority_then_seq() {
        let mut q = EventQueue::new();
        let arr = |p| EventKind::PacketArrival { packet: p, node: NodeId(0) };
        q.schedule(1.0, arr(1));
        q.schedule(1.0, EventKind::TopologyTick);
        q.schedule(0.5, arr(0));
        q.schedule(1.0, arr(2));
        q.schedule(1.0, EventKind::TableRebuild);
        q.schedule(
            1.0,
            EventKind::TxComplete {
                node: NodeId(0),
                port: Port::East,
                generation: 0,
            },
        );
        let kinds: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(kinds[0], arr(0));
        assert_eq!(kinds[1], EventKind::TopologyTick);
        assert_eq!(kinds[2], EventKind::TableRebuild);
        assert!(matches!(kinds[3], EventKind::TxComplete { .. }));
        assert_eq!(&kinds[4..], &[arr(1), arr(2)]);
        assert_eq!(q.processed(), 6);
    }
}
