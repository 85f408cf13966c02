//! Deficit round-robin with quanta proportional to contracted token rates.

use std::collections::{BTreeMap, VecDeque};

use super::{DropReason, HopCounters, Offer, QueueItem, TcError, DRR_QUEUE_BYTES};

/// `quantum_i = ceil(max_frame * rate_i / min_j rate_j)` bytes.
pub fn set_quanta(rates_bps: &[u64], max_frame_bytes: usize) -> Result<Vec<usize>, TcError> {
    if rates_bps.contains(&0) {
        return Err(TcError::ZeroRate);
    }
    let Some(&min) = rates_bps.iter().min() else {
        return Ok(Vec::new());
    };
    Ok(rates_bps
        .iter()
        .map(|&r| (max_frame_bytes as u128 * u128::from(r)).div_ceil(u128::from(min)) as usize)
        .collect())
}

#[derive(Debug)]
pub struct DrrFlow<P> {
    pub id: u16,
    pub token_rate_bps: u64,
    quantum: usize,
    deficit: usize,
    /// Whether this visit's quantum has already been credited.
    credited: bool,
    queue: VecDeque<P>,
    queued: usize,
    capacity: usize,
    counters: HopCounters,
}

impl<P> DrrFlow<P> {
    pub fn quantum(&self) -> usize {
        self.quantum
    }

    pub fn deficit(&self) -> usize {
        self.deficit
    }

    pub fn queued_bytes(&self) -> usize {
        self.queued
    }

    pub fn counters(&self) -> HopCounters {
        self.counters
    }
}

#[derive(Debug)]
pub struct DrrScheduler<P> {
    max_frame: usize,
    flows: BTreeMap<u16, DrrFlow<P>>,
    active: VecDeque<u16>,
    unclassified: HopCounters,
    anomalies: u64,
}

impl<P: QueueItem> DrrScheduler<P> {
    pub fn new(max_frame_bytes: usize) -> Self {
        DrrScheduler {
            max_frame: max_frame_bytes,
            flows: BTreeMap::new(),
            active: VecDeque::new(),
            unclassified: HopCounters::default(),
            anomalies: 0,
        }
    }

    /// Builds a scheduler whose quanta follow the given `(flow, token rate)` pairs.
    pub fn with_flows(max_frame_bytes: usize, flows: &[(u16, u64)]) -> Result<Self, TcError> {
        let mut s = Self::new(max_frame_bytes);
        for &(id, rate) in flows {
            s.add_flow(id, rate, DRR_QUEUE_BYTES)?;
        }
        Ok(s)
    }

    pub fn add_flow(&mut self, id: u16, token_rate_bps: u64, capacity_bytes: usize) -> Result<(), TcError> {
        if token_rate_bps == 0 {
            return Err(TcError::ZeroRate);
        }
        if self.flows.contains_key(&id) {
            return Err(TcError::DuplicateFlow(id));
        }
        self.flows.insert(
            id,
            DrrFlow {
                id,
                token_rate_bps,
                quantum: self.max_frame,
                deficit: 0,
                credited: false,
                queue: VecDeque::new(),
                queued: 0,
                capacity: capacity_bytes,
                counters: HopCounters::default(),
            },
        );
        self.recompute_quanta();
        Ok(())
    }

    fn recompute_quanta(&mut self) {
        let rates: Vec<u64> = self.flows.values().map(|f| f.token_rate_bps).collect();
        let quanta = set_quanta(&rates, self.max_frame).expect("rates validated on insert");
        for (flow, q) in self.flows.values_mut().zip(quanta) {
            flow.quantum = q;
        }
    }

    pub fn flow(&self, id: u16) -> Option<&DrrFlow<P>> {
        self.flows.get(&id)
    }

    pub fn flows(&self) -> impl Iterator<Item = &DrrFlow<P>> {
        self.flows.values()
    }

    pub fn enqueue(&mut self, id: u16, item: P) -> Offer<P> {
        let Some(flow) = self.flows.get_mut(&id) else {
            return self.reject_unclassified(item);
        };
        let len = item.wire_len();
        flow.counters.arrive(len);
        if flow.queued + len > flow.capacity {
            flow.counters.drop(len);
            return Offer::Dropped(item, DropReason::QueueFull);
        }
        let was_idle = flow.queue.is_empty();
        flow.queued += len;
        flow.queue.push_back(item);
        if was_idle {
            self.active.push_back(id);
        }
        Offer::Accepted
    }

    pub(crate) fn reject_unclassified(&mut self, item: P) -> Offer<P> {
        let len = item.wire_len();
        self.unclassified.arrive(len);
        self.unclassified.drop(len);
        Offer::Dropped(item, DropReason::Unclassified)
    }

    pub(crate) fn note_anomaly(&mut self) {
        self.anomalies += 1;
    }

    pub fn classification_errors(&self) -> u64 {
        self.unclassified.drop_frames
    }

    pub fn anomalies(&self) -> u64 {
        self.anomalies
    }

    /// Emits one frame. A flow at the head of the round is credited one
    /// quantum per visit and sends while its head fits the deficit; an
    /// emptied flow leaves the round with its deficit cleared.
    pub fn dequeue(&mut self) -> Option<P> {
        loop {
            let &id = self.active.front()?;
            let flow = self.flows.get_mut(&id).expect("active flow registered");
            if !flow.credited {
                flow.deficit += flow.quantum;
                flow.credited = true;
            }
            let head = flow.queue.front().expect("active flow backlogged").wire_len();
            if head <= flow.deficit {
                let item = flow.queue.pop_front().expect("head present");
                flow.deficit -= head;
                flow.queued -= head;
                flow.counters.depart(head);
                if flow.queue.is_empty() {
                    flow.deficit = 0;
                    flow.credited = false;
                    self.active.pop_front();
                }
                return Some(item);
            }
            flow.credited = false;
            self.active.rotate_left(1);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn queued_bytes(&self) -> usize {
        self.flows.values().map(|f| f.queued).sum()
    }

    pub fn counters(&self) -> HopCounters {
        let mut total = self.unclassified;
        for f in self.flows.values() {
            total.merge(&f.counters);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::Item;
    use super::*;

    const MAX: usize = 1522;

    #[test]
    fn equal_rates_equal_quanta() {
        assert_eq!(set_quanta(&[10, 10, 10], MAX).unwrap(), vec![1522, 1522, 1522]);
    }

    #[test]
    fn proportional_quanta() {
        let q = set_quanta(&[10_000_000, 20_000_000, 30_000_000], MAX).unwrap();
        assert_eq!(q, vec![1522, 3044, 4566]);
        // Ratio oracle.
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let lhs = q[a] as f64 / q[b] as f64;
            let rhs = [1.0, 2.0, 3.0][a] / [1.0, 2.0, 3.0][b];
            assert!((lhs - rhs).abs() < 1.0 / MAX as f64);
        }
    }

    #[test]
    fn single_flow_quantum_is_max_frame() {
        assert_eq!(set_quanta(&[7_000_000], MAX).unwrap(), vec![MAX]);
    }

    #[test]
    fn zero_rate_is_config_error() {
        assert_eq!(set_quanta(&[10, 0], MAX), Err(TcError::ZeroRate));
    }

    #[test]
    fn enqueue_registered_and_unknown() {
        let mut s = DrrScheduler::with_flows(MAX, &[(10, 1_000_000)]).unwrap();
        assert!(s.enqueue(10, Item::tagged(100, 10)).is_accepted());
        assert_eq!(s.flow(10).unwrap().queued_bytes(), 100);
        assert!(matches!(s.enqueue(99, Item::tagged(100, 99)), Offer::Dropped(_, DropReason::Unclassified)));
        assert_eq!(s.classification_errors(), 1);
    }

    #[test]
    fn per_flow_queue_full() {
        let mut s: DrrScheduler<Item> = DrrScheduler::new(MAX);
        s.add_flow(10, 1_000_000, 3000).unwrap();
        assert!(s.enqueue(10, Item::new(1500)).is_accepted());
        assert!(s.enqueue(10, Item::new(1500)).is_accepted());
        assert!(matches!(s.enqueue(10, Item::new(1500)), Offer::Dropped(_, DropReason::QueueFull)));
        assert_eq!(s.flow(10).unwrap().counters().drop_frames, 1);
    }

    #[test]
    fn empty_is_idle() {
        let mut s: DrrScheduler<Item> = DrrScheduler::with_flows(MAX, &[(1, 1)]).unwrap();
        assert!(s.dequeue().is_none());
    }

    #[test]
    fn single_backlogged_flow_gets_everything() {
        let mut s = DrrScheduler::with_flows(MAX, &[(1, 10), (2, 20), (3, 30)]).unwrap();
        for _ in 0..50 {
            s.enqueue(2, Item::tagged(1000, 2));
        }
        let served: usize = std::iter::from_fn(|| s.dequeue()).map(|i| i.len).sum();
        assert_eq!(served, 50_000);
    }

    /// Brute-force round oracle: each round every backlogged flow gets its
    /// quantum and sends while the head fits.
    fn oracle_rounds(quanta: &[usize], sizes: &[usize], rounds: usize) -> Vec<usize> {
        let mut deficit = vec![0usize; quanta.len()];
        let mut served = vec![0usize; quanta.len()];
        for _ in 0..rounds {
            for i in 0..quanta.len() {
                deficit[i] += quanta[i];
                while sizes[i] <= deficit[i] {
                    deficit[i] -= sizes[i];
                    served[i] += sizes[i];
                }
            }
        }
        served
    }

    #[test]
    fn backlogged_ratio_follows_quanta() {
        let mut s = DrrScheduler::new(MAX);
        for (id, rate) in [(1u16, 1u64), (2, 2), (3, 3)] {
            s.add_flow(id, rate, usize::MAX / 4).unwrap();
        }
        let sizes = [1000usize, 700, 1500];
        for (k, &n) in sizes.iter().enumerate() {
            for _ in 0..2000 {
                s.enqueue(k as u16 + 1, Item::tagged(n, k as u16 + 1));
            }
        }
        let quanta: Vec<usize> = (1..=3).map(|id| s.flow(id).unwrap().quantum()).collect();
        let mut served = [0usize; 3];
        let mut frames = 0;
        // 100 rounds' worth of bytes at these quanta
        let budget: usize = quanta.iter().sum::<usize>() * 100;
        let mut total = 0;
        while total < budget {
            let item = s.dequeue().unwrap();
            served[item.vid.unwrap() as usize - 1] += item.len;
            total += item.len;
            frames += 1;
        }
        assert!(frames > 0);
        let oracle = oracle_rounds(&quanta, &sizes, 100);
        for i in 0..3 {
            let diff = served[i].abs_diff(oracle[i]);
            // at most one round apart
            assert!(diff <= quanta[i] + MAX, "flow {i}: served {} oracle {}", served[i], oracle[i]);
        }
        let share = |i: usize| served[i] as f64 / total as f64;
        assert!((share(0) - 1.0 / 6.0).abs() < 0.01);
        assert!((share(1) - 2.0 / 6.0).abs() < 0.01);
        assert!((share(2) - 3.0 / 6.0).abs() < 0.01);
    }

    #[test]
    fn deficit_stays_bounded() {
        let mut s = DrrScheduler::with_flows(MAX, &[(1, 1), (2, 3)]).unwrap();
        for i in 0..500 {
            s.enqueue(1, Item::tagged(64 + (i * 131) % 1458, 1));
            s.enqueue(2, Item::tagged(64 + (i * 71) % 1458, 2));
        }
        while s.dequeue().is_some() {
            for f in s.flows() {
                assert!(f.deficit() < f.quantum() + MAX);
            }
        }
        assert_eq!(s.flow(1).unwrap().deficit(), 0);
    }
}
