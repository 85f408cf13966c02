//! Discrete-event core: integer-nanosecond clock, ordered event queue and
//! per-element random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Simulated time in nanoseconds since the start of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * NANOS_PER_SEC as f64).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0 + ns)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Nanoseconds needed to clock `bits` onto a link of `rate_bps`, rounded up.
pub fn serialization_ns(bits: u64, rate_bps: u64) -> u64 {
    let num = u128::from(bits) * u128::from(NANOS_PER_SEC);
    num.div_ceil(u128::from(rate_bps)) as u64
}

/// Execution class used to break ties between events at the same instant.
/// Arrivals run before departures, departures before timers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Arrival,
    Departure,
    Timer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event scheduled at {at} before current clock {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("time regression: {at} before last update {last}")]
    TimeRegression { at: SimTime, last: SimTime },
}

#[derive(Debug)]
struct Entry<T> {
    time: SimTime,
    kind: EventKind,
    seq: u64,
    payload: T,
}

impl<T> Entry<T> {
    fn key(&self) -> (SimTime, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // BinaryHeap is a max-heap; invert so the earliest key pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

/// Priority queue of events executed in `(time, kind, seq)` order.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    now: SimTime,
    next_seq: u64,
    executed: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: SimTime::ZERO, next_seq: 0, executed: 0 }
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

    /// Number of events popped so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind, payload: T) -> Result<(), SimError> {
        if time < self.now {
            return Err(SimError::ScheduleInPast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, kind, seq, payload });
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    /// Pops the next event if it is due no later than `until`, advancing the clock.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, T)> {
        if self.heap.peek()?.time > until {
            return None;
        }
        let entry = self.heap.pop()?;
        debug_assert!(entry.time >= self.now);
        self.now = entry.time;
        self.executed += 1;
        Some((entry.time, entry.payload))
    }

    /// Runs `handler` on every event up to `until`. Later events stay queued.
    pub fn run<F>(&mut self, until: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, T),
    {
        while let Some((time, payload)) = self.pop_until(until) {
            handler(self, time, payload);
        }
        self.now
    }
}

/// Deterministic random stream for one simulation element.
///
/// Every stream shares the master seed and differs only in the ChaCha stream
/// number, so adding an element never shifts the draws of another.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { inner }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn equal_time_runs_in_schedule_order() {
        let mut q = EventQueue::new();
        for i in 0..5 {
            q.schedule(SimTime::from_nanos(10), EventKind::Timer, i).unwrap();
        }
        let mut seen = Vec::new();
        q.run(SimTime::MAX, |_, _, p| seen.push(p));
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn arrivals_precede_departures_at_same_instant() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(5), EventKind::Departure, "dep").unwrap();
        q.schedule(SimTime::from_nanos(5), EventKind::Arrival, "arr").unwrap();
        let mut seen = Vec::new();
        q.run(SimTime::MAX, |_, _, p| seen.push(p));
        assert_eq!(seen, vec!["arr", "dep"]);
    }

    #[test]
    fn event_at_current_time_runs_before_clock_moves() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(10), EventKind::Timer, 0).unwrap();
        let mut order = Vec::new();
        q.run(SimTime::MAX, |q, t, p| {
            order.push((t.as_nanos(), p));
            if p == 0 {
                q.schedule(SimTime::from_nanos(20), EventKind::Timer, 2).unwrap();
                q.schedule(t, EventKind::Timer, 1).unwrap();
            }
        });
        assert_eq!(order, vec![(10, 0), (10, 1), (20, 2)]);
    }

    #[test]
    fn past_schedule_is_fatal() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(10), EventKind::Timer, ()).unwrap();
        q.pop_until(SimTime::MAX);
        assert_eq!(
            q.schedule(SimTime::from_nanos(9), EventKind::Timer, ()),
            Err(SimError::ScheduleInPast { at: SimTime::from_nanos(9), now: SimTime::from_nanos(10) })
        );
    }

    #[test]
    fn empty_queue_returns_current_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run(SimTime::from_nanos(100), |_, _, _| {}), SimTime::ZERO);
    }

    #[test]
    fn until_leaves_later_events_queued() {
        let mut q = EventQueue::new();
        for t in [5u64, 15, 25] {
            q.schedule(SimTime::from_nanos(t), EventKind::Timer, t).unwrap();
        }
        let end = q.run(SimTime::from_nanos(15), |_, _, _| {});
        assert_eq!(end, SimTime::from_nanos(15));
        assert_eq!(q.len(), 1);
        assert_eq!(q.peek_time(), Some(SimTime::from_nanos(25)));
    }

    #[test]
    fn clock_is_monotone() {
        let mut q = EventQueue::new();
        let mut rng = RngStream::new(3, 0);
        for i in 0..1000u64 {
            q.schedule(SimTime::from_nanos(rng.random_range(0..500)), EventKind::Timer, i).unwrap();
        }
        let mut last = SimTime::ZERO;
        q.run(SimTime::MAX, |q, t, _| {
            assert!(t >= last);
            last = t;
            if rng.random_bool(0.3) {
                let at = t + rng.random_range(0..50);
                q.schedule(at, EventKind::Timer, 0).unwrap();
            }
        });
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 1);
                move |_| r.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 1);
                move |_| r.next_u64()
            })
            .collect();
        let c: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 2);
                move |_| r.next_u64()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn serialization_rounds_up() {
        assert_eq!(serialization_ns(12_000, 10_000_000), 1_200_000);
        assert_eq!(serialization_ns(1, 3), 333_333_334);
    }
}
