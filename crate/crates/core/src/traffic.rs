//! Open-loop traffic sources and per-subscriber measurement.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::frame::{MAX_FRAME_BYTES, MIN_FRAME_LEN};
use crate::sim::{RngStream, SimTime, NANOS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    #[error("mean rate must be positive")]
    ZeroRate,
    #[error("frame size {0} outside [64, 1522]")]
    FrameSize(usize),
    #[error("on period must be positive")]
    ZeroOn,
    #[error("stop precedes start")]
    Window,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("delivery of subscriber {subscriber} frame without an injection timestamp")]
pub struct AccountingError {
    pub subscriber: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Cbr,
    Poisson,
    /// CBR at peak rate during exponential on periods, silent during
    /// exponential off periods; the peak keeps the long-run mean at the
    /// configured rate.
    OnOff {
        mean_on_ns: u64,
        mean_off_ns: u64,
    },
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Cbr => "cbr",
            SourceKind::Poisson => "poisson",
            SourceKind::OnOff { .. } => "onoff",
        }
    }
}

/// Untagged frame size in bytes, FCS included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSize {
    Fixed(usize),
    Uniform(usize, usize),
}

impl FrameSize {
    pub fn mean_bits(&self) -> f64 {
        match *self {
            FrameSize::Fixed(n) => n as f64 * 8.0,
            FrameSize::Uniform(a, b) => (a + b) as f64 * 4.0,
        }
    }

    fn validate(&self) -> Result<(), SourceError> {
        let (a, b) = match *self {
            FrameSize::Fixed(n) => (n, n),
            FrameSize::Uniform(a, b) => (a, b),
        };
        for n in [a, b] {
            if !(MIN_FRAME_LEN..=MAX_FRAME_BYTES).contains(&n) {
                return Err(SourceError::FrameSize(n));
            }
        }
        if a > b {
            return Err(SourceError::FrameSize(a));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut RngStream) -> usize {
        match *self {
            FrameSize::Fixed(n) => n,
            FrameSize::Uniform(a, b) => rng.random_range(a..=b),
        }
    }
}

impl fmt::Display for FrameSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameSize::Fixed(n) => write!(f, "{n}"),
            FrameSize::Uniform(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub subscriber: u16,
    pub kind: SourceKind,
    pub rate_bps: u64,
    pub frame_size: FrameSize,
    pub start: SimTime,
    /// Exclusive; `SimTime::MAX` runs to the end of the simulation.
    pub stop: SimTime,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SourceError> {
        if self.rate_bps == 0 {
            return Err(SourceError::ZeroRate);
        }
        self.frame_size.validate()?;
        if let SourceKind::OnOff { mean_on_ns: 0, .. } = self.kind {
            return Err(SourceError::ZeroOn);
        }
        if self.stop < self.start {
            return Err(SourceError::Window);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct OnPeriod {
    real_start: f64,
    /// On-time consumed before this period began.
    virt_start: f64,
    len: f64,
}

/// Generator of `(time, frame size)` arrivals for one source.
#[derive(Debug)]
pub struct Source {
    spec: SourceSpec,
    rng: RngStream,
    /// CBR: bits emitted so far, for drift-free cumulative timing.
    emitted_bits: u128,
    /// Poisson: continuous arrival clock in ns.
    clock_ns: f64,
    /// On-off: on-time clock in ns and the current on period.
    virt_ns: f64,
    period: Option<OnPeriod>,
    frames: u64,
}

impl Source {
    pub fn new(spec: SourceSpec, rng: RngStream) -> Result<Self, SourceError> {
        spec.validate()?;
        let start = spec.start.as_nanos() as f64;
        Ok(Source { spec, rng, emitted_bits: 0, clock_ns: start, virt_ns: 0.0, period: None, frames: 0 })
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    fn exp_ns(&mut self, mean_ns: f64) -> f64 {
        if mean_ns <= 0.0 {
            return 0.0;
        }
        Exp::new(1.0 / mean_ns).expect("positive mean").sample(&mut self.rng)
    }

    /// The next arrival, or `None` once the source has stopped.
    pub fn next_arrival(&mut self) -> Option<(SimTime, usize)> {
        let size = self.spec.frame_size.draw(&mut self.rng);
        let at = match self.spec.kind {
            SourceKind::Cbr => {
                let off = self.emitted_bits * u128::from(NANOS_PER_SEC) / u128::from(self.spec.rate_bps);
                self.emitted_bits += size as u128 * 8;
                SimTime::from_nanos(self.spec.start.as_nanos().saturating_add(off as u64))
            }
            SourceKind::Poisson => {
                let at = self.clock_ns;
                let mean = self.spec.frame_size.mean_bits() * 1e9 / self.spec.rate_bps as f64;
                self.clock_ns += self.exp_ns(mean);
                SimTime::from_nanos(at as u64)
            }
            SourceKind::OnOff { mean_on_ns, mean_off_ns } => self.onoff_time(size, mean_on_ns, mean_off_ns),
        };
        if at >= self.spec.stop {
            return None;
        }
        self.frames += 1;
        Some((at, size))
    }

    fn onoff_time(&mut self, size: usize, mean_on_ns: u64, mean_off_ns: u64) -> SimTime {
        let (on, off) = (mean_on_ns as f64, mean_off_ns as f64);
        let peak = self.spec.rate_bps as f64 * (on + off) / on;
        let mut p = match self.period {
            Some(p) => p,
            None => OnPeriod { real_start: self.spec.start.as_nanos() as f64, virt_start: 0.0, len: self.exp_ns(on) },
        };
        // map on-time to wall time, skipping exhausted on periods
        while self.virt_ns >= p.virt_start + p.len {
            let real_end = p.real_start + p.len;
            p = OnPeriod {
                real_start: real_end + self.exp_ns(off),
                virt_start: p.virt_start + p.len,
                len: self.exp_ns(on),
            };
        }
        self.period = Some(p);
        let at = p.real_start + (self.virt_ns - p.virt_start);
        self.virt_ns += size as f64 * 8.0 * 1e9 / peak;
        SimTime::from_nanos(at as u64)
    }
}

/// Nearest-rank percentile: the smallest sample with at least `p`% of the
/// samples at or below it. `sorted` must be ascending.
pub fn percentile(sorted: &[u64], p: u32) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(p) * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    pub subscriber: u16,
    pub plan: String,
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
    pub offered_frames: u64,
    pub delivered_frames: u64,
    pub dropped_frames: u64,
    warmup: SimTime,
    window_ns: u64,
    measured_bits: u64,
    delays: Vec<u64>,
    series: Vec<u64>,
}

impl FlowStats {
    pub fn new(subscriber: u16, plan: impl Into<String>, warmup: SimTime, window_ns: u64) -> Self {
        FlowStats {
            subscriber,
            plan: plan.into(),
            offered_bytes: 0,
            delivered_bytes: 0,
            dropped_bytes: 0,
            offered_frames: 0,
            delivered_frames: 0,
            dropped_frames: 0,
            warmup,
            window_ns: window_ns.max(1),
            measured_bits: 0,
            delays: Vec::new(),
            series: Vec::new(),
        }
    }

    pub fn record_offer(&mut self, bytes: usize) {
        self.offered_bytes += bytes as u64;
        self.offered_frames += 1;
    }

    pub fn record_drop(&mut self, bytes: usize) {
        self.dropped_bytes += bytes as u64;
        self.dropped_frames += 1;
    }

    pub fn record_delivery(
        &mut self,
        bytes: usize,
        sent: Option<SimTime>,
        now: SimTime,
    ) -> Result<(), AccountingError> {
        let sent = sent.ok_or(AccountingError { subscriber: self.subscriber })?;
        self.delivered_bytes += bytes as u64;
        self.delivered_frames += 1;
        let w = (now.as_nanos() / self.window_ns) as usize;
        if self.series.len() <= w {
            self.series.resize(w + 1, 0);
        }
        self.series[w] += bytes as u64;
        if now >= self.warmup {
            self.measured_bits += bytes as u64 * 8;
            self.delays.push(now - sent);
        }
        Ok(())
    }

    /// Post-warm-up delay samples, in delivery order.
    pub fn delays(&self) -> &[u64] {
        &self.delays
    }

    /// Delivered bytes per consecutive window from time zero.
    pub fn window_series(&self) -> &[u64] {
        &self.series
    }

    pub fn window_ns(&self) -> u64 {
        self.window_ns
    }

    pub fn summarize(&self, end: SimTime) -> ReportRow {
        let span = end.saturating_sub(self.warmup);
        let goodput = if span == 0 { 0.0 } else { self.measured_bits as f64 * 1e9 / span as f64 };
        let mut sorted = self.delays.clone();
        sorted.sort_unstable();
        let mean =
            if sorted.is_empty() { 0.0 } else { sorted.iter().map(|&d| d as f64).sum::<f64>() / sorted.len() as f64 };
        ReportRow {
            subscriber: self.subscriber,
            plan: self.plan.clone(),
            offered_bytes: self.offered_bytes,
            delivered_bytes: self.delivered_bytes,
            dropped_bytes: self.dropped_bytes,
            goodput_bps: goodput,
            mean_delay_ns: mean,
            p95_delay_ns: percentile(&sorted, 95),
            p99_delay_ns: percentile(&sorted, 99),
            drop_ratio: if self.offered_bytes == 0 {
                0.0
            } else {
                self.dropped_bytes as f64 / self.offered_bytes as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subscriber: u16,
    pub plan: String,
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
    pub goodput_bps: f64,
    pub mean_delay_ns: f64,
    pub p95_delay_ns: u64,
    pub p99_delay_ns: u64,
    pub drop_ratio: f64,
}

pub const CSV_HEADER: &str =
    "subscriber,plan,offered_bytes,delivered_bytes,dropped_bytes,goodput_bps,mean_delay_ns,p95_delay_ns,p99_delay_ns,drop_ratio";

impl ReportRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.3},{},{},{:.6}",
            self.subscriber,
            self.plan,
            self.offered_bytes,
            self.delivered_bytes,
            self.dropped_bytes,
            self.goodput_bps,
            self.mean_delay_ns,
            self.p95_delay_ns,
            self.p99_delay_ns,
            self.drop_ratio
        )
    }

    pub fn parse_csv(line: &str) -> Option<ReportRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return None;
        }
        Some(ReportRow {
            subscriber: f[0].parse().ok()?,
            plan: f[1].to_string(),
            offered_bytes: f[2].parse().ok()?,
            delivered_bytes: f[3].parse().ok()?,
            dropped_bytes: f[4].parse().ok()?,
            goodput_bps: f[5].parse().ok()?,
            mean_delay_ns: f[6].parse().ok()?,
            p95_delay_ns: f[7].parse().ok()?,
            p99_delay_ns: f[8].parse().ok()?,
            drop_ratio: f[9].parse().ok()?,
        })
    }
}

pub fn write_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Parses a report written by [`write_csv`]; `None` on a malformed file.
pub fn read_csv(text: &str) -> Option<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next()?.trim() != CSV_HEADER {
        return None;
    }
    lines.filter(|l| !l.trim().is_empty()).map(ReportRow::parse_csv).collect()
}
