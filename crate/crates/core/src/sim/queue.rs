//! Time-ordered event queue with insertion-order tie breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<K> {
    pub time_ms: f64,
    pub sequence_no: u64,
    pub node_id: u32,
    pub kind: K,
}

struct Entry<K>(SimEvent<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time_ms
            .total_cmp(&self.0.time_ms)
            .then_with(|| other.0.sequence_no.cmp(&self.0.sequence_no))
    }
}

pub struct EventQueue<K> {
    heap: BinaryHeap<Entry<K>>,
    next_seq: u64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn push(&mut self, time_ms: f64, node_id: u32, kind: K) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(SimEvent {
            time_ms,
            sequence_no: seq,
            node_id,
            kind,
        }));
        seq
    }

    pub fn pop(&mut self) -> Option<SimEvent<K>> {
        self.heap.pop().map(|e| e.0)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time_ms)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Events inserted so far.
    pub fn inserted(&self) -> u64 {
        self.next_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_by_insertion() {
        let mut q = EventQueue::new();
        q.push(5.0, 0, 'a');
        q.push(1.0, 0, 'b');
        q.push(5.0, 0, 'c');
        q.push(1.0, 0, 'd');
        let order: String = std::iter::from_fn(|| q.pop().map(|e| e.kind)).collect();
        assert_eq!(order, "bdac");
    }

    proptest! {
        #[test]
        fn pops_are_sorted(times in proptest::collection::vec(0.0f64..1e6, 0..200)) {
            let mut q = EventQueue::new();
            for (i, t) in times.iter().enumerate() {
                q.push(*t, i as u32, ());
            }
            let mut last = (f64::NEG_INFINITY, 0u64);
            while let Some(e) = q.pop() {
                prop_assert!(e.time_ms > last.0 || (e.time_ms == last.0 && e.sequence_no > last.1));
                last = (e.time_ms, e.sequence_no);
            }
        }
    }
}
