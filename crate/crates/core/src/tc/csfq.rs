//! Core-stateless fair queueing: per-flow rate estimation by exponential
//! averaging, a fair share solved from the estimates, and probabilistic
//! dropping of the part of each flow above that share.

use std::collections::BTreeMap;

use rand::Rng;

use crate::sim::{RngStream, SimTime, NANOS_PER_SEC};

use super::{classify, ByteFifo, DropReason, HopCounters, Offer, QueueItem, FIFO_QUEUE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsfqParams {
    /// Averaging constant K, also the fair-share update window.
    pub window_ns: u64,
    pub link_rate_bps: u64,
}

impl CsfqParams {
    pub const DEFAULT_WINDOW_NS: u64 = 100_000_000;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsfqVerdict {
    Forward,
    Drop,
}

#[derive(Debug, Clone, Copy)]
struct Estimate {
    rate_bps: f64,
    last_arrival: SimTime,
}

/// `max(0, 1 - alpha / rate)`.
pub fn drop_probability(rate_bps: f64, fair_share_bps: f64) -> f64 {
    if rate_bps <= fair_share_bps || rate_bps <= 0.0 {
        0.0
    } else {
        1.0 - fair_share_bps / rate_bps
    }
}

/// Solves `sum_i min(r_i, alpha) = capacity` by bisection.
///
/// If the rates already fit, the answer is the largest rate. The returned
/// value is on the feasible side: `sum_i min(r_i, alpha) <= capacity`.
pub fn solve_fair_share(rates_bps: &[f64], capacity_bps: f64) -> f64 {
    let max = rates_bps.iter().copied().fold(0.0f64, f64::max);
    let load = |alpha: f64| rates_bps.iter().map(|&r| r.min(alpha)).sum::<f64>();
    if load(max) <= capacity_bps {
        return max;
    }
    let (mut lo, mut hi) = (0.0f64, max);
    for _ in 0..128 {
        let mid = 0.5 * (lo + hi);
        if load(mid) > capacity_bps {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-9 * capacity_bps.max(1.0) {
            break;
        }
    }
    lo
}

#[derive(Debug, Clone)]
pub struct CsfqState {
    params: CsfqParams,
    flows: BTreeMap<u16, Estimate>,
    fair_share: f64,
    congested: bool,
    window_start: SimTime,
    window_bits: u64,
}

impl CsfqState {
    pub fn new(params: CsfqParams) -> Self {
        CsfqState {
            params,
            flows: BTreeMap::new(),
            fair_share: params.link_rate_bps as f64,
            congested: false,
            window_start: SimTime::ZERO,
            window_bits: 0,
        }
    }

    pub fn params(&self) -> CsfqParams {
        self.params
    }

    pub fn fair_share(&self) -> f64 {
        self.fair_share
    }

    pub fn congested(&self) -> bool {
        self.congested
    }

    pub fn rate_estimate(&self, flow: u16) -> Option<f64> {
        self.flows.get(&flow).map(|e| e.rate_bps)
    }

    pub fn set_rate_estimate(&mut self, flow: u16, rate_bps: f64, last_arrival: SimTime) {
        self.flows.insert(flow, Estimate { rate_bps, last_arrival });
    }

    pub fn set_fair_share(&mut self, alpha: f64, congested: bool) {
        self.fair_share = alpha;
        self.congested = congested;
    }

    /// Folds one arrival into the flow's estimate:
    /// `r' = (1 - e^(-T/K)) * L/T + e^(-T/K) * r`, with `r = L/K` on first
    /// sight. Simultaneous arrivals take the `T -> 0` limit, `r + L/K`.
    pub fn estimate_rate(&mut self, flow: u16, bits: u64, now: SimTime) -> f64 {
        let k = self.params.window_ns as f64 / NANOS_PER_SEC as f64;
        let len = bits as f64;
        self.window_bits += bits;
        let rate = match self.flows.get(&flow) {
            None => len / k,
            Some(est) => {
                let t = now.saturating_sub(est.last_arrival) as f64 / NANOS_PER_SEC as f64;
                if t == 0.0 {
                    est.rate_bps + len / k
                } else {
                    let w = (-t / k).exp();
                    (1.0 - w) * (len / t) + w * est.rate_bps
                }
            }
        };
        self.flows.insert(flow, Estimate { rate_bps: rate, last_arrival: now });
        rate
    }

    /// Estimate decayed to `now` as if a zero-length arrival happened then.
    fn decayed(&self, est: &Estimate, now: SimTime) -> f64 {
        let k = self.params.window_ns as f64;
        let t = now.saturating_sub(est.last_arrival) as f64;
        est.rate_bps * (-t / k).exp()
    }

    pub fn drop_decision(&self, flow: u16, rng: &mut RngStream) -> CsfqVerdict {
        if !self.congested {
            return CsfqVerdict::Forward;
        }
        let rate = self.flows.get(&flow).map_or(0.0, |e| e.rate_bps);
        let p = drop_probability(rate, self.fair_share);
        if p > 0.0 && rng.random::<f64>() < p {
            CsfqVerdict::Drop
        } else {
            CsfqVerdict::Forward
        }
    }

    /// Closes the averaging window once `K` has elapsed. Congested when the
    /// aggregate arrival rate over the window exceeded the link rate; alpha
    /// then solves `sum min(r_i, alpha) = C`, otherwise it is the largest
    /// estimate. Returns whether an update happened.
    pub fn update_fair_share(&mut self, now: SimTime) -> bool {
        let elapsed = now.saturating_sub(self.window_start);
        if elapsed < self.params.window_ns {
            return false;
        }
        let aggregate = self.window_bits as f64 * NANOS_PER_SEC as f64 / elapsed as f64;
        let rates: Vec<f64> = self.flows.values().map(|e| self.decayed(e, now)).collect();
        let link = self.params.link_rate_bps as f64;
        self.congested = aggregate > link;
        self.fair_share =
            if self.congested { solve_fair_share(&rates, link) } else { rates.iter().copied().fold(0.0, f64::max) };
        self.window_start = now;
        self.window_bits = 0;
        true
    }
}

/// CSFQ dropper in front of a tail-drop FIFO, keyed on C-VID.
#[derive(Debug)]
pub struct CsfqQueue<P> {
    state: CsfqState,
    fifo: ByteFifo<P>,
    flows: BTreeMap<u16, HopCounters>,
    unclassified: HopCounters,
    anomalies: u64,
}

impl<P: QueueItem> CsfqQueue<P> {
    pub fn new(params: CsfqParams, flow_ids: &[u16]) -> Self {
        CsfqQueue {
            state: CsfqState::new(params),
            fifo: ByteFifo::new(FIFO_QUEUE_BYTES),
            flows: flow_ids.iter().map(|&id| (id, HopCounters::default())).collect(),
            unclassified: HopCounters::default(),
            anomalies: 0,
        }
    }

    pub fn state(&self) -> &CsfqState {
        &self.state
    }

    pub fn flow_counters(&self, id: u16) -> Option<HopCounters> {
        self.flows.get(&id).copied()
    }

    pub fn anomalies(&self) -> u64 {
        self.anomalies
    }

    pub fn classification_errors(&self) -> u64 {
        self.unclassified.drop_frames
    }

    pub fn offer(&mut self, item: P, now: SimTime, rng: &mut RngStream) -> Offer<P> {
        let len = item.wire_len();
        let flow = match classify(&item) {
            Ok(c) if self.flows.contains_key(&c.flow) => {
                if c.anomalous {
                    self.anomalies += 1;
                }
                c.flow
            }
            _ => {
                self.unclassified.arrive(len);
                self.unclassified.drop(len);
                return Offer::Dropped(item, DropReason::Unclassified);
            }
        };
        let counters = self.flows.get_mut(&flow).expect("flow checked");
        counters.arrive(len);
        self.state.estimate_rate(flow, item.wire_bits(), now);
        self.state.update_fair_share(now);
        if self.state.drop_decision(flow, rng) == CsfqVerdict::Drop {
            counters.drop(len);
            return Offer::Dropped(item, DropReason::Policed);
        }
        match self.fifo.offer(item) {
            Offer::Accepted => Offer::Accepted,
            Offer::Dropped(item, reason) => {
                counters.drop(len);
                Offer::Dropped(item, reason)
            }
        }
    }

    pub fn pop(&mut self) -> Option<P> {
        let item = self.fifo.pop()?;
        if let Some(flow) = item.outer_vid() {
            if let Some(c) = self.flows.get_mut(&flow) {
                c.depart(item.wire_len());
            }
        }
        Some(item)
    }

    pub fn queued_bytes(&self) -> usize {
        self.fifo.queued_bytes()
    }

    pub fn counters(&self) -> HopCounters {
        let mut total = self.unclassified;
        for c in self.flows.values() {
            total.merge(c);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(window_ns: u64, link: u64) -> CsfqState {
        CsfqState::new(CsfqParams { window_ns, link_rate_bps: link })
    }

    #[test]
    fn first_arrival_is_l_over_k() {
        let mut s = state(100_000_000, 1_000_000);
        assert_eq!(s.estimate_rate(1, 12_000, SimTime::ZERO), 120_000.0);
    }

    #[test]
    fn one_step_formula() {
        let mut s = state(100_000_000, 1_000_000);
        s.set_rate_estimate(1, 1e6, SimTime::ZERO);
        let r = s.estimate_rate(1, 12_000, SimTime::from_nanos(10_000_000));
        // Independently evaluated: (1 - e^-0.1) * 1.2e6 + e^-0.1 * 1e6
        let expected = 1_019_032.516_392_808_1;
        assert!((r - expected).abs() < 1e-6, "{r}");
    }

    #[test]
    fn stale_flow_decays_toward_zero() {
        let mut s = state(100_000_000, 1_000_000);
        s.set_rate_estimate(1, 5e6, SimTime::ZERO);
        let r = s.estimate_rate(1, 12_000, SimTime::from_nanos(100 * NANOS_PER_SEC));
        assert!(r < 200.0, "{r}");
    }

    #[test]
    fn cbr_converges_within_one_percent() {
        let k = 100_000_000u64;
        let mut s = state(k, 100_000_000);
        // 12000-bit frames every 1.2 ms = 10 Mb/s
        let mut t = 0u64;
        let mut r = 0.0;
        while t <= 10 * k {
            r = s.estimate_rate(1, 12_000, SimTime::from_nanos(t));
            t += 1_200_000;
        }
        assert!((r - 10e6).abs() / 10e6 < 0.01, "{r}");
    }

    #[test]
    fn drop_probability_cases() {
        assert_eq!(drop_probability(2.0, 1.0), 0.5);
        assert_eq!(drop_probability(1.0, 1.0), 0.0);
        assert_eq!(drop_probability(0.5, 1.0), 0.0);
    }

    #[test]
    fn never_drops_at_or_below_share() {
        let mut s = state(100_000_000, 9_000_000);
        s.set_rate_estimate(1, 3e6, SimTime::ZERO);
        s.set_fair_share(3e6, true);
        let mut rng = RngStream::new(1, 1);
        assert!((0..10_000).all(|_| s.drop_decision(1, &mut rng) == CsfqVerdict::Forward));
    }

    #[test]
    fn monte_carlo_drop_fraction() {
        let mut s = state(100_000_000, 9_000_000);
        s.set_rate_estimate(1, 4e6, SimTime::ZERO);
        s.set_fair_share(1e6, true);
        let mut rng = RngStream::new(42, 9);
        let n = 100_000;
        let drops = (0..n).filter(|_| s.drop_decision(1, &mut rng) == CsfqVerdict::Drop).count();
        let frac = drops as f64 / n as f64;
        assert!((frac - 0.75).abs() <= 0.01, "{frac}");
        // and within 3 sigma of the binomial
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((frac - 0.75).abs() <= 3.0 * sigma, "{frac}");
    }

    #[test]
    fn bisection_fixed_point() {
        let alpha = solve_fair_share(&[2e6, 4e6, 10e6], 9e6);
        assert!((alpha - 3.5e6).abs() < 1.0, "{alpha}");
        let load: f64 = [2e6, 4e6, 10e6].iter().map(|&r: &f64| r.min(alpha)).sum();
        assert!(load <= 9e6);
    }

    #[test]
    fn single_flow_under_link() {
        let mut s = state(100_000_000, 9_000_000);
        let mut t = 0;
        while t <= 500_000_000 {
            s.estimate_rate(1, 12_000, SimTime::from_nanos(t));
            s.update_fair_share(SimTime::from_nanos(t));
            t += 12_000_000; // 1 Mb/s
        }
        assert!(!s.congested());
        assert!((s.fair_share() - 1e6).abs() / 1e6 < 0.05);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(s.drop_decision(1, &mut rng), CsfqVerdict::Forward);
    }

    #[test]
    fn equal_flows_at_capacity() {
        let alpha = solve_fair_share(&[3e6, 3e6, 3e6], 9e6);
        assert_eq!(alpha, 3e6);
    }
}
