//! Scenario configuration: a flat `section.key = value` text format.
//!
//! ```text
//! # two legacy subscribers and a shared group
//! topology.uplink_rate = 1Gbps
//! subscribers.5.plan = legacy
//! subscribers.5.token_rate = 10Mbps
//! subscribers.5.bucket_size = 1Mb
//! group.svid = 100
//! group.members = 10,11
//! sources.0.subscriber = 5
//! sources.0.kind = poisson
//! sources.0.rate = 20Mbps
//! run.duration = 60s
//! ```
//!
//! Rates take `bps`, `kbps`, `Mbps`, `Gbps`; times take `ns`, `us`, `ms`, `s`
//! (bare numbers are seconds); sizes take `b`, `kb`, `Mb`, `Gb` for bits and
//! `B`, `KB`, `MB` for bytes (bare numbers are bits). Frame sizes are plain
//! byte counts or `min-max` ranges.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::frame::{MAX_FRAME_BITS, MAX_VID};
use crate::sim::{SimTime, NANOS_PER_SEC};
use crate::tc::CsfqParams;
use crate::traffic::{FrameSize, SourceKind, SourceSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlanKind {
    Legacy,
    Shared,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Legacy => "legacy",
            PlanKind::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    Drr,
    Csfq,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Drr => "drr",
            SchedulerKind::Csfq => "csfq",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    None,
    Hex,
    Pcap,
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceMode::None => "none",
            TraceMode::Hex => "hex",
            TraceMode::Pcap => "pcap",
        })
    }
}

impl std::str::FromStr for TraceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(TraceMode::None),
            "hex" => Ok(TraceMode::Hex),
            "pcap" => Ok(TraceMode::Pcap),
            _ => Err(format!("expected none, hex or pcap, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceScope {
    /// Only frames crossing the olt uplink.
    #[default]
    Uplink,
    /// Every link transmission and reception.
    All,
}

impl fmt::Display for TraceScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceScope::Uplink => "uplink",
            TraceScope::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub rate_bps: u64,
    pub delay_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyConfig {
    /// Host to ONU and ONU to olt / olt_c links.
    pub access: LinkConfig,
    /// olt_c to olt link; its rate defaults to the group TBF rate.
    pub inner_rate_bps: Option<u64>,
    pub inner_delay_ns: u64,
    /// olt to server link.
    pub uplink: LinkConfig,
    pub hosts_per_subscriber: usize,
    pub aging_ns: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            access: LinkConfig { rate_bps: 1_000_000_000, delay_ns: 1_000 },
            inner_rate_bps: None,
            inner_delay_ns: 1_000,
            uplink: LinkConfig { rate_bps: 1_000_000_000, delay_ns: 1_000 },
            hosts_per_subscriber: 1,
            aging_ns: crate::switch::DEFAULT_AGING_NS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriberConfig {
    pub id: u16,
    pub plan: PlanKind,
    pub token_rate_bps: u64,
    pub bucket_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupConfig {
    pub svid: u16,
    pub members: Vec<u16>,
    pub scheduler: SchedulerKind,
    pub csfq_window_ns: u64,
    /// Defaults to the sum of member token rates.
    pub tbf_rate_bps: Option<u64>,
    /// Defaults to the sum of member bucket sizes.
    pub tbf_bucket_bits: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub duration_ns: u64,
    pub seed: u64,
    /// Fraction of the run excluded from goodput and delay summaries.
    pub warmup: f64,
    /// Width of the per-subscriber throughput series.
    pub window_ns: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { duration_ns: 10 * NANOS_PER_SEC, seed: 1, warmup: 0.1, window_ns: NANOS_PER_SEC }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputConfig {
    pub csv: String,
    pub trace: TraceMode,
    pub trace_scope: TraceScope,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { csv: "report.csv".into(), trace: TraceMode::None, trace_scope: TraceScope::Uplink }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub subscribers: BTreeMap<u16, SubscriberConfig>,
    pub group: Option<GroupConfig>,
    /// Keyed by the index used in the file.
    pub sources: BTreeMap<u32, SourceSpec>,
    pub run: RunConfig,
    pub outputs: OutputConfig,
}

impl ScenarioConfig {
    pub fn group_tbf_rate(&self) -> Option<u64> {
        let g = self.group.as_ref()?;
        Some(g.tbf_rate_bps.unwrap_or_else(|| self.member_sum(g, |s| s.token_rate_bps)))
    }

    pub fn group_tbf_bucket(&self) -> Option<u64> {
        let g = self.group.as_ref()?;
        Some(g.tbf_bucket_bits.unwrap_or_else(|| self.member_sum(g, |s| s.bucket_bits)))
    }

    pub fn inner_rate(&self) -> Option<u64> {
        self.topology.inner_rate_bps.or_else(|| self.group_tbf_rate())
    }

    fn member_sum(&self, g: &GroupConfig, f: impl Fn(&SubscriberConfig) -> u64) -> u64 {
        g.members.iter().filter_map(|m| self.subscribers.get(m)).map(f).sum()
    }

    pub fn warmup_time(&self) -> SimTime {
        SimTime::from_nanos((self.run.duration_ns as f64 * self.run.warmup) as u64)
    }

    pub fn legacy_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.subscribers.values().filter(|s| s.plan == PlanKind::Legacy).map(|s| s.id)
    }

    /// The same scenario with every shared member turned into a standalone
    /// legacy subscriber at its own token rate and bucket size.
    pub fn legacy_reference(&self) -> ScenarioConfig {
        let mut c = self.clone();
        for s in c.subscribers.values_mut() {
            s.plan = PlanKind::Legacy;
        }
        c.group = None;
        c
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", n + 1), "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::new(format!("line {}", n + 1), "empty key"));
            }
            if entries.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(ConfigError::new(k, "duplicate key"));
            }
        }
        let cfg = Builder::default().build(&entries)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        positive("topology.access_rate", t.access.rate_bps)?;
        positive("topology.uplink_rate", t.uplink.rate_bps)?;
        if let Some(r) = t.inner_rate_bps {
            positive("topology.inner_rate", r)?;
        }
        if t.hosts_per_subscriber == 0 {
            return Err(ConfigError::new("topology.hosts_per_subscriber", "must be at least 1"));
        }
        positive("topology.aging", t.aging_ns)?;

        for s in self.subscribers.values() {
            let key = |k: &str| format!("subscribers.{}.{k}", s.id);
            check_vid(&key("plan"), s.id)?;
            positive(&key("token_rate"), s.token_rate_bps)?;
            if s.token_rate_bps > t.access.rate_bps {
                return Err(ConfigError::new(key("token_rate"), "exceeds the access link rate"));
            }
            if s.bucket_bits < MAX_FRAME_BITS {
                return Err(ConfigError::new(key("bucket_size"), format!("must hold one {MAX_FRAME_BITS}-bit frame")));
            }
            if s.plan == PlanKind::Legacy && s.token_rate_bps > t.uplink.rate_bps {
                return Err(ConfigError::new(key("token_rate"), "exceeds the uplink rate"));
            }
        }

        let shared: Vec<u16> = self.subscribers.values().filter(|s| s.plan == PlanKind::Shared).map(|s| s.id).collect();
        match &self.group {
            None if !shared.is_empty() => {
                return Err(ConfigError::new(format!("subscribers.{}.plan", shared[0]), "shared plan without a group"));
            }
            None => {}
            Some(g) => {
                check_vid("group.svid", g.svid)?;
                if self.subscribers.contains_key(&g.svid) {
                    return Err(ConfigError::new("group.svid", format!("vid {} already used by a subscriber", g.svid)));
                }
                if g.members.is_empty() {
                    return Err(ConfigError::new("group.members", "group has no members"));
                }
                for (i, m) in g.members.iter().enumerate() {
                    if g.members[..i].contains(m) {
                        return Err(ConfigError::new("group.members", format!("member {m} listed twice")));
                    }
                    match self.subscribers.get(m) {
                        None => return Err(ConfigError::new("group.members", format!("unknown subscriber {m}"))),
                        Some(s) if s.plan != PlanKind::Shared => {
                            return Err(ConfigError::new(
                                "group.members",
                                format!("subscriber {m} is not on the shared plan"),
                            ))
                        }
                        Some(_) => {}
                    }
                }
                if let Some(&s) = shared.iter().find(|s| !g.members.contains(s)) {
                    return Err(ConfigError::new(
                        format!("subscribers.{s}.plan"),
                        "shared subscriber outside the group",
                    ));
                }
                positive("group.csfq_window", g.csfq_window_ns)?;
                let rate = self.group_tbf_rate().unwrap_or(0);
                positive("group.tbf_rate", rate)?;
                if rate > t.uplink.rate_bps {
                    return Err(ConfigError::new("group.tbf_rate", "exceeds the uplink rate"));
                }
                if self.group_tbf_bucket().unwrap_or(0) < MAX_FRAME_BITS {
                    return Err(ConfigError::new(
                        "group.tbf_bucket",
                        format!("must hold one {MAX_FRAME_BITS}-bit frame"),
                    ));
                }
                if self.inner_rate().unwrap_or(0) > t.uplink.rate_bps.max(t.access.rate_bps) {
                    return Err(ConfigError::new("topology.inner_rate", "exceeds the link capacity"));
                }
            }
        }

        for (n, src) in &self.sources {
            let key = |k: &str| format!("sources.{n}.{k}");
            if !self.subscribers.contains_key(&src.subscriber) {
                return Err(ConfigError::new(key("subscriber"), format!("unknown subscriber {}", src.subscriber)));
            }
            src.validate().map_err(|e| {
                let k = match e {
                    crate::traffic::SourceError::ZeroRate => "rate",
                    crate::traffic::SourceError::FrameSize(_) => "frame_size",
                    crate::traffic::SourceError::ZeroOn => "on",
                    crate::traffic::SourceError::Window => "stop",
                };
                ConfigError::new(key(k), e.to_string())
            })?;
        }

        positive("run.duration", self.run.duration_ns)?;
        positive("run.window", self.run.window_ns)?;
        if !(0.0..1.0).contains(&self.run.warmup) {
            return Err(ConfigError::new("run.warmup", "must lie in [0, 1)"));
        }
        if self.outputs.csv.is_empty() || self.outputs.csv.contains(['/', '\\']) {
            return Err(ConfigError::new("outputs.csv", "must be a plain file name"));
        }
        Ok(())
    }

    /// Canonical text form: every key explicit, fixed order, base units.
    pub fn dump(&self) -> String {
        let mut o = String::new();
        let t = &self.topology;
        let _ = writeln!(o, "topology.access_rate = {}bps", t.access.rate_bps);
        let _ = writeln!(o, "topology.access_delay = {}ns", t.access.delay_ns);
        if let Some(r) = t.inner_rate_bps {
            let _ = writeln!(o, "topology.inner_rate = {r}bps");
        }
        let _ = writeln!(o, "topology.inner_delay = {}ns", t.inner_delay_ns);
        let _ = writeln!(o, "topology.uplink_rate = {}bps", t.uplink.rate_bps);
        let _ = writeln!(o, "topology.uplink_delay = {}ns", t.uplink.delay_ns);
        let _ = writeln!(o, "topology.hosts_per_subscriber = {}", t.hosts_per_subscriber);
        let _ = writeln!(o, "topology.aging = {}ns", t.aging_ns);
        for s in self.subscribers.values() {
            let _ = writeln!(o, "subscribers.{}.plan = {}", s.id, s.plan);
            let _ = writeln!(o, "subscribers.{}.token_rate = {}bps", s.id, s.token_rate_bps);
            let _ = writeln!(o, "subscribers.{}.bucket_size = {}b", s.id, s.bucket_bits);
        }
        if let Some(g) = &self.group {
            let members: Vec<String> = g.members.iter().map(u16::to_string).collect();
            let _ = writeln!(o, "group.svid = {}", g.svid);
            let _ = writeln!(o, "group.members = {}", members.join(","));
            let _ = writeln!(o, "group.scheduler = {}", g.scheduler);
            let _ = writeln!(o, "group.csfq_window = {}ns", g.csfq_window_ns);
            if let Some(r) = g.tbf_rate_bps {
                let _ = writeln!(o, "group.tbf_rate = {r}bps");
            }
            if let Some(b) = g.tbf_bucket_bits {
                let _ = writeln!(o, "group.tbf_bucket = {b}b");
            }
        }
        for (n, s) in &self.sources {
            let _ = writeln!(o, "sources.{n}.subscriber = {}", s.subscriber);
            let _ = writeln!(o, "sources.{n}.kind = {}", s.kind.name());
            let _ = writeln!(o, "sources.{n}.rate = {}bps", s.rate_bps);
            let _ = writeln!(o, "sources.{n}.frame_size = {}", s.frame_size);
            let _ = writeln!(o, "sources.{n}.start = {}ns", s.start.as_nanos());
            if s.stop != SimTime::MAX {
                let _ = writeln!(o, "sources.{n}.stop = {}ns", s.stop.as_nanos());
            }
            if let SourceKind::OnOff { mean_on_ns, mean_off_ns } = s.kind {
                let _ = writeln!(o, "sources.{n}.on = {mean_on_ns}ns");
                let _ = writeln!(o, "sources.{n}.off = {mean_off_ns}ns");
            }
        }
        let _ = writeln!(o, "run.duration = {}ns", self.run.duration_ns);
        let _ = writeln!(o, "run.seed = {}", self.run.seed);
        let _ = writeln!(o, "run.warmup = {:?}", self.run.warmup);
        let _ = writeln!(o, "run.window = {}ns", self.run.window_ns);
        let _ = writeln!(o, "outputs.csv = {}", self.outputs.csv);
        let _ = writeln!(o, "outputs.trace = {}", self.outputs.trace);
        let _ = writeln!(o, "outputs.trace_scope = {}", self.outputs.trace_scope);
        o
    }
}

fn positive(key: &str, v: u64) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::new(key, "must be positive"));
    }
    Ok(())
}

fn check_vid(key: &str, vid: u16) -> Result<(), ConfigError> {
    if vid == 0 || vid > MAX_VID {
        return Err(ConfigError::new(key, format!("vid {vid} outside 1..=4094")));
    }
    Ok(())
}

fn scaled(key: &str, value: &str, units: &[(&str, f64)], bare: f64) -> Result<u64, ConfigError> {
    let v = value.trim();
    let split = v.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '+' || c == '-'));
    let (num, unit) = match split {
        Some(i) => (&v[..i], v[i..].trim()),
        None => (v, ""),
    };
    let mult = if unit.is_empty() {
        bare
    } else {
        units
            .iter()
            .find(|(u, _)| *u == unit)
            .map(|&(_, m)| m)
            .ok_or_else(|| ConfigError::new(key, format!("unknown unit {unit:?}")))?
    };
    let n: f64 = num.parse().map_err(|_| ConfigError::new(key, format!("not a number: {value:?}")))?;
    if !n.is_finite() || n < 0.0 {
        return Err(ConfigError::new(key, format!("invalid value {value:?}")));
    }
    // integers stay exact; decimals round to the nearest base unit
    if let (Ok(i), true) = (num.parse::<u64>(), mult.fract() == 0.0) {
        return i.checked_mul(mult as u64).ok_or_else(|| ConfigError::new(key, format!("value {value:?} overflows")));
    }
    let x = (n * mult).round();
    if x >= u64::MAX as f64 {
        return Err(ConfigError::new(key, format!("value {value:?} overflows")));
    }
    Ok(x as u64)
}

pub fn parse_rate(key: &str, v: &str) -> Result<u64, ConfigError> {
    scaled(key, v, &[("bps", 1.0), ("kbps", 1e3), ("Mbps", 1e6), ("Gbps", 1e9)], 1.0)
}

pub fn parse_time(key: &str, v: &str) -> Result<u64, ConfigError> {
    scaled(key, v, &[("ns", 1.0), ("us", 1e3), ("ms", 1e6), ("s", 1e9)], 1e9)
}

pub fn parse_size(key: &str, v: &str) -> Result<u64, ConfigError> {
    scaled(key, v, &[("b", 1.0), ("kb", 1e3), ("Mb", 1e6), ("Gb", 1e9), ("B", 8.0), ("KB", 8e3), ("MB", 8e6)], 1.0)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::new(key, format!("not an integer: {v:?}")))
}

fn parse_frame_size(key: &str, v: &str) -> Result<FrameSize, ConfigError> {
    match v.split_once('-') {
        Some((a, b)) => Ok(FrameSize::Uniform(parse_int(key, a.trim())?, parse_int(key, b.trim())?)),
        None => Ok(FrameSize::Fixed(parse_int(key, v)?)),
    }
}

#[derive(Default)]
struct SourceDraft {
    subscriber: Option<u16>,
    kind: Option<String>,
    rate: Option<u64>,
    frame_size: Option<FrameSize>,
    start: u64,
    stop: Option<u64>,
    on: Option<u64>,
    off: Option<u64>,
}

#[derive(Default)]
struct SubscriberDraft {
    plan: Option<PlanKind>,
    token_rate: Option<u64>,
    bucket: Option<u64>,
}

#[derive(Default)]
struct Builder {
    cfg: ScenarioConfig,
    subs: BTreeMap<u16, SubscriberDraft>,
    srcs: BTreeMap<u32, SourceDraft>,
    svid: Option<u16>,
    members: Option<Vec<u16>>,
    scheduler: Option<SchedulerKind>,
    window: Option<u64>,
    group_rate: Option<u64>,
    group_bucket: Option<u64>,
}

impl Builder {
    fn build(mut self, entries: &BTreeMap<String, (usize, String)>) -> Result<ScenarioConfig, ConfigError> {
        for (key, (_, value)) in entries {
            self.set(key, value)?;
        }
        for (id, d) in std::mem::take(&mut self.subs) {
            let key = |k: &str| format!("subscribers.{id}.{k}");
            let sub = SubscriberConfig {
                id,
                plan: d.plan.ok_or_else(|| ConfigError::new(key("plan"), "missing"))?,
                token_rate_bps: d.token_rate.ok_or_else(|| ConfigError::new(key("token_rate"), "missing"))?,
                bucket_bits: d.bucket.ok_or_else(|| ConfigError::new(key("bucket_size"), "missing"))?,
            };
            self.cfg.subscribers.insert(id, sub);
        }
        let group_keys = self.svid.is_some()
            || self.members.is_some()
            || self.scheduler.is_some()
            || self.window.is_some()
            || self.group_rate.is_some()
            || self.group_bucket.is_some();
        if group_keys {
            self.cfg.group = Some(GroupConfig {
                svid: self.svid.ok_or_else(|| ConfigError::new("group.svid", "missing"))?,
                members: self.members.take().ok_or_else(|| ConfigError::new("group.members", "missing"))?,
                scheduler: self.scheduler.unwrap_or(SchedulerKind::Drr),
                csfq_window_ns: self.window.unwrap_or(CsfqParams::DEFAULT_WINDOW_NS),
                tbf_rate_bps: self.group_rate,
                tbf_bucket_bits: self.group_bucket,
            });
        }
        for (n, d) in std::mem::take(&mut self.srcs) {
            let key = |k: &str| format!("sources.{n}.{k}");
            let kind = match d.kind.as_deref() {
                Some("cbr") => SourceKind::Cbr,
                Some("poisson") => SourceKind::Poisson,
                Some("onoff") => SourceKind::OnOff {
                    mean_on_ns: d.on.ok_or_else(|| ConfigError::new(key("on"), "missing for an onoff source"))?,
                    mean_off_ns: d.off.ok_or_else(|| ConfigError::new(key("off"), "missing for an onoff source"))?,
                },
                Some(other) => return Err(ConfigError::new(key("kind"), format!("unknown source kind {other:?}"))),
                None => return Err(ConfigError::new(key("kind"), "missing")),
            };
            if !matches!(kind, SourceKind::OnOff { .. }) && (d.on.is_some() || d.off.is_some()) {
                let k = if d.on.is_some() { "on" } else { "off" };
                return Err(ConfigError::new(key(k), "only valid for onoff sources"));
            }
            let spec = SourceSpec {
                subscriber: d.subscriber.ok_or_else(|| ConfigError::new(key("subscriber"), "missing"))?,
                kind,
                rate_bps: d.rate.ok_or_else(|| ConfigError::new(key("rate"), "missing"))?,
                frame_size: d.frame_size.unwrap_or(FrameSize::Fixed(1518)),
                start: SimTime::from_nanos(d.start),
                stop: d.stop.map_or(SimTime::MAX, SimTime::from_nanos),
            };
            self.cfg.sources.insert(n, spec);
        }
        Ok(self.cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let parts: Vec<&str> = key.split('.').collect();
        let unknown = || ConfigError::new(key, "unknown key");
        match parts.as_slice() {
            ["topology", k] => {
                let t = &mut self.cfg.topology;
                match *k {
                    "access_rate" => t.access.rate_bps = parse_rate(key, v)?,
                    "access_delay" => t.access.delay_ns = parse_time(key, v)?,
                    "inner_rate" => t.inner_rate_bps = Some(parse_rate(key, v)?),
                    "inner_delay" => t.inner_delay_ns = parse_time(key, v)?,
                    "uplink_rate" => t.uplink.rate_bps = parse_rate(key, v)?,
                    "uplink_delay" => t.uplink.delay_ns = parse_time(key, v)?,
                    "hosts_per_subscriber" => t.hosts_per_subscriber = parse_int(key, v)?,
                    "aging" => t.aging_ns = parse_time(key, v)?,
                    _ => return Err(unknown()),
                }
            }
            ["subscribers", id, k] => {
                let id: u16 = parse_int(key, id)?;
                let d = self.subs.entry(id).or_default();
                match *k {
                    "plan" => {
                        d.plan = Some(match v {
                            "legacy" => PlanKind::Legacy,
                            "shared" => PlanKind::Shared,
                            _ => return Err(ConfigError::new(key, format!("expected legacy or shared, got {v:?}"))),
                        })
                    }
                    "token_rate" => d.token_rate = Some(parse_rate(key, v)?),
                    "bucket_size" => d.bucket = Some(parse_size(key, v)?),
                    _ => return Err(unknown()),
                }
            }
            ["group", k] => match *k {
                "svid" => self.svid = Some(parse_int(key, v)?),
                "members" => {
                    let m: Result<Vec<u16>, _> = v.split(',').map(|s| parse_int(key, s.trim())).collect();
                    self.members = Some(m?);
                }
                "scheduler" => {
                    self.scheduler = Some(match v {
                        "drr" => SchedulerKind::Drr,
                        "csfq" => SchedulerKind::Csfq,
                        _ => return Err(ConfigError::new(key, format!("expected drr or csfq, got {v:?}"))),
                    })
                }
                "csfq_window" => self.window = Some(parse_time(key, v)?),
                "tbf_rate" => self.group_rate = Some(parse_rate(key, v)?),
                "tbf_bucket" => self.group_bucket = Some(parse_size(key, v)?),
                _ => return Err(unknown()),
            },
            ["sources", n, k] => {
                let n: u32 = parse_int(key, n)?;
                let d = self.srcs.entry(n).or_default();
                match *k {
                    "subscriber" => d.subscriber = Some(parse_int(key, v)?),
                    "kind" => d.kind = Some(v.to_string()),
                    "rate" => d.rate = Some(parse_rate(key, v)?),
                    "frame_size" => d.frame_size = Some(parse_frame_size(key, v)?),
                    "start" => d.start = parse_time(key, v)?,
                    "stop" => d.stop = Some(parse_time(key, v)?),
                    "on" => d.on = Some(parse_time(key, v)?),
                    "off" => d.off = Some(parse_time(key, v)?),
                    _ => return Err(unknown()),
                }
            }
            ["run", k] => {
                let r = &mut self.cfg.run;
                match *k {
                    "duration" => r.duration_ns = parse_time(key, v)?,
                    "seed" => r.seed = parse_int(key, v)?,
                    "warmup" => {
                        r.warmup = v.parse().map_err(|_| ConfigError::new(key, format!("not a number: {v:?}")))?
                    }
                    "window" => r.window_ns = parse_time(key, v)?,
                    _ => return Err(unknown()),
                }
            }
            ["outputs", k] => {
                let o = &mut self.cfg.outputs;
                match *k {
                    "csv" => o.csv = v.to_string(),
                    "trace" => o.trace = v.parse().map_err(|e: String| ConfigError::new(key, e))?,
                    "trace_scope" => {
                        o.trace_scope = match v {
                            "uplink" => TraceScope::Uplink,
                            "all" => TraceScope::All,
                            _ => return Err(ConfigError::new(key, format!("expected uplink or all, got {v:?}"))),
                        }
                    }
                    _ => return Err(unknown()),
                }
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }
}
