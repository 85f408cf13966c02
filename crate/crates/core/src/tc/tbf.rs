use crate::sim::SimTime;

use super::{ByteFifo, HopCounters, Offer, QueueItem, TokenBucket, TokenBucketParams};

#[derive(Debug, PartialEq, Eq)]
pub enum Departure<P> {
    Frame(P, SimTime),
    Idle,
}

/// Token bucket filter: a tail-drop FIFO drained only with tokens.
#[derive(Debug)]
pub struct TbfShaper<P> {
    bucket: TokenBucket,
    fifo: ByteFifo<P>,
    log: Option<Vec<(SimTime, u64)>>,
}

impl<P: QueueItem> TbfShaper<P> {
    pub fn new(params: TokenBucketParams, capacity_bytes: usize) -> Self {
        TbfShaper { bucket: TokenBucket::new(params), fifo: ByteFifo::new(capacity_bytes), log: None }
    }

    /// Keep a `(time, bits)` record of every departure.
    pub fn record_departures(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn params(&self) -> TokenBucketParams {
        self.bucket.params()
    }

    pub fn bucket(&self) -> &TokenBucket {
        &self.bucket
    }

    pub fn departures(&self) -> &[(SimTime, u64)] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn offer(&mut self, item: P) -> Offer<P> {
        if item.wire_bits() > self.bucket.params().bucket_bits {
            return self.fifo.drop_oversize(item);
        }
        self.fifo.offer(item)
    }

    fn catch_up(&mut self, now: SimTime) {
        if now > self.bucket.last_update() {
            self.bucket.refill(now).expect("monotone clock");
        }
    }

    /// When the head frame will conform, or `None` if the queue is empty.
    pub fn head_ready_at(&mut self, now: SimTime) -> Option<SimTime> {
        self.catch_up(now);
        let bits = self.fifo.front()?.wire_bits();
        Some(self.bucket.ready_at(bits).max(now))
    }

    /// Releases the head frame if it conforms at `now`.
    pub fn take(&mut self, now: SimTime) -> Option<P> {
        self.catch_up(now);
        let bits = self.fifo.front()?.wire_bits();
        if !self.bucket.conforms(bits) {
            return None;
        }
        self.release(now, bits)
    }

    fn release(&mut self, at: SimTime, bits: u64) -> Option<P> {
        self.bucket.consume(bits);
        if let Some(log) = self.log.as_mut() {
            log.push((at, bits));
        }
        self.fifo.pop()
    }

    /// Commits the head frame to its departure instant: `now` if enough
    /// tokens are present, otherwise the moment the deficit is refilled.
    /// The bucket is advanced to that instant.
    pub fn next_departure(&mut self, now: SimTime) -> Departure<P> {
        let Some(at) = self.head_ready_at(now) else {
            return Departure::Idle;
        };
        self.catch_up(at);
        let bits = self.fifo.front().map(|p| p.wire_bits()).unwrap_or_default();
        match self.release(at, bits) {
            Some(item) => Departure::Frame(item, at),
            None => Departure::Idle,
        }
    }

    pub(crate) fn front_len(&self) -> Option<usize> {
        self.fifo.front().map(|p| p.wire_len())
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn queued_bytes(&self) -> usize {
        self.fifo.queued_bytes()
    }

    pub fn counters(&self) -> HopCounters {
        self.fifo.counters()
    }
}
