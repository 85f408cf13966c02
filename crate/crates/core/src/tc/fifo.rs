use std::collections::VecDeque;

use super::{DropReason, HopCounters, Offer, QueueItem};

/// Tail-drop FIFO bounded in bytes.
#[derive(Debug)]
pub struct ByteFifo<P> {
    queue: VecDeque<P>,
    capacity: usize,
    queued: usize,
    counters: HopCounters,
}

impl<P: QueueItem> ByteFifo<P> {
    pub fn new(capacity_bytes: usize) -> Self {
        ByteFifo { queue: VecDeque::new(), capacity: capacity_bytes, queued: 0, counters: HopCounters::default() }
    }

    pub fn offer(&mut self, item: P) -> Offer<P> {
        let len = item.wire_len();
        self.counters.arrive(len);
        if self.queued + len > self.capacity {
            self.counters.drop(len);
            return Offer::Dropped(item, DropReason::QueueFull);
        }
        self.queued += len;
        self.queue.push_back(item);
        Offer::Accepted
    }

    pub fn front(&self) -> Option<&P> {
        self.queue.front()
    }

    pub fn pop(&mut self) -> Option<P> {
        let item = self.queue.pop_front()?;
        let len = item.wire_len();
        self.queued -= len;
        self.counters.depart(len);
        Some(item)
    }

    pub(crate) fn drop_oversize(&mut self, item: P) -> Offer<P> {
        let len = item.wire_len();
        self.counters.arrive(len);
        self.counters.drop(len);
        Offer::Dropped(item, DropReason::Oversize)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn queued_bytes(&self) -> usize {
        self.queued
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity
    }

    pub fn counters(&self) -> HopCounters {
        self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::Item;
    use super::*;

    #[test]
    fn preserves_order() {
        let mut q = ByteFifo::new(10_000);
        for id in 0..5 {
            assert!(q.offer(Item::new(100).with_id(id)).is_accepted());
        }
        let ids: Vec<u64> = std::iter::from_fn(|| q.pop()).map(|i| i.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn full_queue_drops_and_counts() {
        let mut q = ByteFifo::new(250);
        assert!(q.offer(Item::new(100)).is_accepted());
        assert!(q.offer(Item::new(100)).is_accepted());
        assert!(matches!(q.offer(Item::new(100)), Offer::Dropped(_, DropReason::QueueFull)));
        assert_eq!(q.counters().drop_frames, 1);
        assert!(q.counters().conserves(q.queued_bytes() as u64));
    }
}
