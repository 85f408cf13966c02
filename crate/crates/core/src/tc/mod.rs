//! Traffic-control elements bound to switch egress ports.
//!
//! Every element is a queue discipline: packets are offered on arrival and
//! polled when the transmitter is free. Polling can yield a packet, a time at
//! which a shaped head becomes conformant, or nothing.

mod arbiter;
pub mod conformance;
mod csfq;
mod drr;
mod fifo;
mod tbf;
mod token_bucket;

pub use arbiter::{ShaperBank, UPLINK_QUANTUM_BYTES};
pub use csfq::{solve_fair_share, CsfqParams, CsfqQueue, CsfqState, CsfqVerdict};
pub use drr::{set_quanta, DrrFlow, DrrScheduler};
pub use fifo::ByteFifo;
pub use tbf::{Departure, TbfShaper};
pub use token_bucket::{TokenBucket, TokenBucketParams};

use std::fmt;

use thiserror::Error;

use crate::frame::{EthernetFrame, MAX_FRAME_BYTES};
use crate::sim::{RngStream, SimTime};

/// Default per-flow DRR queue depth, in maximum-size frames.
pub const DRR_QUEUE_FRAMES: usize = 100;
/// Default TBF / FIFO depth, in maximum-size frames.
pub const FIFO_QUEUE_FRAMES: usize = 500;

pub const DRR_QUEUE_BYTES: usize = DRR_QUEUE_FRAMES * MAX_FRAME_BYTES;
pub const FIFO_QUEUE_BYTES: usize = FIFO_QUEUE_FRAMES * MAX_FRAME_BYTES;

/// Anything that occupies link capacity.
pub trait QueueItem {
    fn wire_len(&self) -> usize;
    /// Outermost VLAN id, if tagged.
    fn outer_vid(&self) -> Option<u16>;
    fn tag_depth(&self) -> usize;

    fn wire_bits(&self) -> u64 {
        self.wire_len() as u64 * 8
    }
}

impl QueueItem for EthernetFrame {
    fn wire_len(&self) -> usize {
        EthernetFrame::wire_len(self)
    }

    fn outer_vid(&self) -> Option<u16> {
        EthernetFrame::outer_vid(self).map(|v| v.get())
    }

    fn tag_depth(&self) -> usize {
        self.depth()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    QueueFull,
    Unclassified,
    Policed,
    Oversize,
    Format,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::QueueFull => "queue-full",
            DropReason::Unclassified => "unclassified",
            DropReason::Policed => "policed",
            DropReason::Oversize => "oversize",
            DropReason::Format => "format",
        })
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Offer<P> {
    Accepted,
    Dropped(P, DropReason),
}

impl<P> Offer<P> {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Offer::Accepted)
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Poll<P> {
    Ready(P),
    /// Nothing may leave before this instant.
    Wait(SimTime),
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TcError {
    #[error("token rate must be positive")]
    ZeroRate,
    #[error("bucket of {bucket_bits} bits cannot hold a {frame_bits}-bit frame")]
    BucketTooSmall { bucket_bits: u64, frame_bits: u64 },
    #[error("unknown flow {0}")]
    UnknownFlow(u16),
    #[error("duplicate flow {0}")]
    DuplicateFlow(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("untagged frame cannot be classified")]
    Untagged,
}

/// Flow id of a frame at the inner stage: its C-VID.
///
/// Frames are expected to carry exactly one tag there. A deeper stack falls
/// back to the outermost VID and is reported as an anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classified {
    pub flow: u16,
    pub anomalous: bool,
}

pub fn classify<P: QueueItem>(item: &P) -> Result<Classified, ClassifyError> {
    let flow = item.outer_vid().ok_or(ClassifyError::Untagged)?;
    Ok(Classified { flow, anomalous: item.tag_depth() > 1 })
}

/// Per-element frame and byte counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HopCounters {
    pub in_frames: u64,
    pub in_bytes: u64,
    pub out_frames: u64,
    pub out_bytes: u64,
    pub drop_frames: u64,
    pub drop_bytes: u64,
}

impl HopCounters {
    pub(crate) fn arrive(&mut self, bytes: usize) {
        self.in_frames += 1;
        self.in_bytes += bytes as u64;
    }

    pub(crate) fn depart(&mut self, bytes: usize) {
        self.out_frames += 1;
        self.out_bytes += bytes as u64;
    }

    pub(crate) fn drop(&mut self, bytes: usize) {
        self.drop_frames += 1;
        self.drop_bytes += bytes as u64;
    }

    /// Ingress bytes = egress + dropped + still queued.
    pub fn conserves(&self, queued_bytes: u64) -> bool {
        self.in_bytes == self.out_bytes + self.drop_bytes + queued_bytes
    }

    pub fn merge(&mut self, other: &HopCounters) {
        self.in_frames += other.in_frames;
        self.in_bytes += other.in_bytes;
        self.out_frames += other.out_frames;
        self.out_bytes += other.out_bytes;
        self.drop_frames += other.drop_frames;
        self.drop_bytes += other.drop_bytes;
    }
}

/// The queue discipline bound to one egress port.
#[derive(Debug)]
pub enum TrafficControl<P> {
    Fifo(ByteFifo<P>),
    Drr(DrrScheduler<P>),
    Csfq(CsfqQueue<P>),
    Shapers(ShaperBank<P>),
}

impl<P: QueueItem> TrafficControl<P> {
    pub fn fifo() -> Self {
        TrafficControl::Fifo(ByteFifo::new(FIFO_QUEUE_BYTES))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TrafficControl::Fifo(_) => "fifo",
            TrafficControl::Drr(_) => "drr",
            TrafficControl::Csfq(_) => "csfq",
            TrafficControl::Shapers(_) => "tbf-bank",
        }
    }

    pub fn offer(&mut self, item: P, now: SimTime, rng: &mut RngStream) -> Offer<P> {
        match self {
            TrafficControl::Fifo(q) => q.offer(item),
            TrafficControl::Drr(s) => match classify(&item) {
                Ok(c) => {
                    if c.anomalous {
                        s.note_anomaly();
                    }
                    s.enqueue(c.flow, item)
                }
                Err(_) => s.reject_unclassified(item),
            },
            TrafficControl::Csfq(q) => q.offer(item, now, rng),
            TrafficControl::Shapers(b) => b.offer(item, now),
        }
    }

    pub fn poll(&mut self, now: SimTime) -> Poll<P> {
        let next = match self {
            TrafficControl::Fifo(q) => q.pop(),
            TrafficControl::Drr(s) => s.dequeue(),
            TrafficControl::Csfq(q) => q.pop(),
            TrafficControl::Shapers(b) => return b.poll(now),
        };
        next.map_or(Poll::Idle, Poll::Ready)
    }

    pub fn counters(&self) -> HopCounters {
        match self {
            TrafficControl::Fifo(q) => q.counters(),
            TrafficControl::Drr(s) => s.counters(),
            TrafficControl::Csfq(q) => q.counters(),
            TrafficControl::Shapers(b) => b.counters(),
        }
    }

    pub fn queued_bytes(&self) -> u64 {
        match self {
            TrafficControl::Fifo(q) => q.queued_bytes() as u64,
            TrafficControl::Drr(s) => s.queued_bytes() as u64,
            TrafficControl::Csfq(q) => q.queued_bytes() as u64,
            TrafficControl::Shapers(b) => b.queued_bytes() as u64,
        }
    }
}
