use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Cell;

#[derive(Debug, Clone)]
pub enum EventKind {
    /// Head-of-line cell finished transmission on a port.
    CellDeparture { port: usize },
    /// A forward cell or backward RM cell reaches the next node.
    CellArrival { cell: Cell },
    IntervalEnd { port: usize, generation: u64 },
    SourceSend { vc: usize, generation: u64 },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::CellDeparture { .. } => 0,
            EventKind::CellArrival { .. } => 1,
            EventKind::IntervalEnd { .. } => 2,
            EventKind::SourceSend { .. } => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    seq: u64,
}

impl Event {
    fn key(&self) -> (f64, u8, u64) {
        (self.time, self.kind.rank(), self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, ka, sa) = self.key();
        let (tb, kb, sb) = other.key();
        tb.total_cmp(&ta).then(kb.cmp(&ka)).then(sb.cmp(&sa))
    }
}

/// Time-ordered queue; ties go by event kind, then insertion order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time.is_finite());
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, kind, seq });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.heap.iter()
    }
}
