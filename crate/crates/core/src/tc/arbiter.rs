use std::collections::BTreeMap;

use crate::frame::MAX_FRAME_BITS;
use crate::sim::SimTime;

use super::conformance::{check_envelope, EnvelopeVerdict};
use super::{ByteFifo, HopCounters, Offer, Poll, QueueItem, TbfShaper, TokenBucketParams, FIFO_QUEUE_BYTES};

/// Byte quantum each conformant shaper output earns per round.
pub const UPLINK_QUANTUM_BYTES: usize = 1522;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lane {
    Shaper(u16),
    Unshaped,
}

/// One TBF per outer VID feeding a shared link, arbitrated by byte-weighted
/// round robin among heads that conform right now. Frames whose outer VID
/// has no shaper go through an unshaped lane.
#[derive(Debug)]
pub struct ShaperBank<P> {
    shapers: BTreeMap<u16, TbfShaper<P>>,
    unshaped: ByteFifo<P>,
    lanes: Vec<Lane>,
    deficits: Vec<usize>,
    credited: Vec<bool>,
    cursor: usize,
}

impl<P: QueueItem> Default for ShaperBank<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: QueueItem> ShaperBank<P> {
    pub fn new() -> Self {
        ShaperBank {
            shapers: BTreeMap::new(),
            unshaped: ByteFifo::new(FIFO_QUEUE_BYTES),
            lanes: vec![Lane::Unshaped],
            deficits: vec![0],
            credited: vec![false],
            cursor: 0,
        }
    }

    pub fn add_shaper(&mut self, vid: u16, params: TokenBucketParams) {
        let shaper = TbfShaper::new(params, FIFO_QUEUE_BYTES).record_departures();
        if self.shapers.insert(vid, shaper).is_none() {
            // keep the unshaped lane last
            let at = self.lanes.len() - 1;
            self.lanes.insert(at, Lane::Shaper(vid));
            self.deficits.insert(at, 0);
            self.credited.insert(at, false);
        }
    }

    pub fn shaper(&self, vid: u16) -> Option<&TbfShaper<P>> {
        self.shapers.get(&vid)
    }

    pub fn shapers(&self) -> impl Iterator<Item = (u16, &TbfShaper<P>)> {
        self.shapers.iter().map(|(&v, s)| (v, s))
    }

    pub fn len(&self) -> usize {
        self.shapers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapers.is_empty()
    }

    pub fn unshaped_counters(&self) -> HopCounters {
        self.unshaped.counters()
    }

    pub fn offer(&mut self, item: P, _now: SimTime) -> Offer<P> {
        match item.outer_vid().and_then(|v| self.shapers.get_mut(&v)) {
            Some(shaper) => shaper.offer(item),
            None => self.unshaped.offer(item),
        }
    }

    fn head_len(&mut self, lane: Lane, now: SimTime) -> Option<usize> {
        match lane {
            Lane::Shaper(vid) => {
                let shaper = self.shapers.get_mut(&vid)?;
                match shaper.head_ready_at(now) {
                    Some(t) if t <= now => shaper.front_len(),
                    _ => None,
                }
            }
            Lane::Unshaped => self.unshaped.front().map(|p| p.wire_len()),
        }
    }

    fn take(&mut self, lane: Lane, now: SimTime) -> Option<P> {
        match lane {
            Lane::Shaper(vid) => self.shapers.get_mut(&vid)?.take(now),
            Lane::Unshaped => self.unshaped.pop(),
        }
    }

    fn advance(&mut self) {
        self.deficits[self.cursor] = 0;
        self.credited[self.cursor] = false;
        self.cursor = (self.cursor + 1) % self.lanes.len();
    }

    pub fn poll(&mut self, now: SimTime) -> Poll<P> {
        let n = self.lanes.len();
        for _ in 0..3 * n {
            let lane = self.lanes[self.cursor];
            let Some(head) = self.head_len(lane, now) else {
                self.advance();
                continue;
            };
            if !self.credited[self.cursor] {
                self.deficits[self.cursor] += UPLINK_QUANTUM_BYTES;
                self.credited[self.cursor] = true;
            }
            if head <= self.deficits[self.cursor] {
                let item = self.take(lane, now).expect("eligible head");
                self.deficits[self.cursor] -= head;
                if self.head_len(lane, now).is_none() {
                    self.advance();
                }
                return Poll::Ready(item);
            }
            // carry the deficit, move on
            self.credited[self.cursor] = false;
            self.cursor = (self.cursor + 1) % n;
        }
        let wake = self.shapers.values_mut().filter_map(|s| s.head_ready_at(now)).min();
        match wake {
            Some(t) => Poll::Wait(t.max(now)),
            None => Poll::Idle,
        }
    }

    pub fn queued_bytes(&self) -> usize {
        self.unshaped.queued_bytes() + self.shapers.values().map(|s| s.queued_bytes()).sum::<usize>()
    }

    pub fn counters(&self) -> HopCounters {
        let mut total = self.unshaped.counters();
        for s in self.shapers.values() {
            total.merge(&s.counters());
        }
        total
    }

    /// Envelope verdict of every shaper's departure trace, with one maximum
    /// frame of slack.
    pub fn verdicts(&self) -> Vec<(u16, TokenBucketParams, EnvelopeVerdict)> {
        self.shapers
            .iter()
            .map(|(&vid, s)| {
                let p = s.params();
                (vid, p, check_envelope(s.departures(), p.rate_bps, p.bucket_bits, MAX_FRAME_BITS))
            })
            .collect()
    }
}
