use std::collections::VecDeque;

use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    Accepted,
    Dropped,
}

/// Packet currently being transmitted on a port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InService {
    pub packet: u32,
    pub next: NodeId,
    pub propagation_s: f64,
}

/// Drop-tail FIFO of one output port. The capacity covers waiting packets
/// plus the one in service, so a packet pushed back after a link failure
/// always fits.
#[derive(Debug, Clone)]
pub struct PortQueue {
    capacity: Option<usize>,
    waiting: VecDeque<u32>,
    pub in_service: Option<InService>,
    /// Bumped whenever service is aborted, invalidating the pending completion.
    pub generation: u64,
}

impl PortQueue {
    pub fn bounded(capacity: usize) -> Self {
        Self {
            capacity: Some(capacity),
            waiting: VecDeque::new(),
            in_service: None,
            generation: 0,
        }
    }

    /// Source-side queue of a ground node.
    pub fn unbounded() -> Self {
        Self {
            capacity: None,
            ..Self::bounded(0)
        }
    }

    /// Waiting plus in service.
    pub fn len(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn enqueue(&mut self, packet: u32) -> Enqueue {
        if let Some(b) = self.capacity {
            if self.len() >= b {
                return Enqueue::Dropped;
            }
        }
        self.waiting.push_back(packet);
        debug_assert!(self.capacity.is_none_or(|b| self.len() <= b));
        Enqueue::Accepted
    }

    pub fn front(&self) -> Option<u32> {
        self.waiting.front().copied()
    }

    pub fn pop_front(&mut self) -> Option<u32> {
        self.waiting.pop_front()
    }

    /// Service aborted: the packet goes back to the head of the line.
    pub fn abort_service(&mut self) -> Option<u32> {
        let s = self.in_service.take()?;
        self.generation += 1;
        self.waiting.push_front(s.packet);
        Some(s.packet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_tail_boundary() {
        let mut q = PortQueue::bounded(200);
        for i in 0..199 {
            assert_eq!(q.enqueue(i), Enqueue::Accepted);
        }
        assert_eq!(q.len(), 199);
        assert_eq!(q.enqueue(199), Enqueue::Accepted);
        assert_eq!(q.len(), 200);
        assert_eq!(q.enqueue(200), Enqueue::Dropped);
        assert_eq!(q.len(), 200);
    }

    #[test]
    fn fifo_and_abort() {
        let mut q = PortQueue::bounded(3);
        q.enqueue(1);
        q.enqueue(2);
        let head = q.pop_front().unwrap();
        q.in_service = Some(InService {
            packet: head,
            next: NodeId(5),
            propagation_s: 0.0,
        });
        q.enqueue(3);
        assert_eq!(q.len(), 3);
        assert_eq!(q.enqueue(4), Enqueue::Dropped);
        assert_eq!(q.abort_service(), Some(1));
        assert_eq!(q.generation, 1);
        assert_eq!(q.len(), 3);
        let order: Vec<_> = std::iter::from_fn(|| q.pop_front()).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn unbounded_never_drops() {
        let mut q = PortQueue::unbounded();
        for i in 0..10_000 {
            assert_eq!(q.enqueue(i), Enqueue::Accepted);
        }
    }
}
