//! The access tree: hosts behind per-subscriber ONUs, an `olt_c` stage that
//! schedules shared-plan members per C-VID, and an `olt` that stacks the
//! group S-TAG and shapes every legacy subscriber and the group on the uplink.
//!
//! ```text
//! host -- onu(legacy) ------------------------------+
//!                                                    olt == uplink == server
//! host -- onu(shared) -- olt_c ==[DRR|CSFQ]==> strunk+
//! ```
//!
//! Traffic flows from hosts toward the server. Each link direction has its own
//! egress queue discipline; ports without a dedicated one use a tail-drop FIFO.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::config::{ConfigError, PlanKind, ScenarioConfig, SchedulerKind, TraceMode, TraceScope};
use crate::frame::{EthernetFrame, MacAddress, Vid, MAX_FRAME_BYTES, TPID_CTAG, TPID_STAG};
use crate::sim::{serialization_ns, EventKind, EventQueue, RngStream, SimError, SimTime};
use crate::switch::{FdbRow, PortRole, SwitchNode};
use crate::tc::{
    CsfqParams, CsfqQueue, DrrScheduler, HopCounters, Offer, Poll, QueueItem, ShaperBank, TcError, TokenBucketParams,
    TrafficControl,
};
use crate::trace::{hex_line, Direction, PcapWriter};
use crate::traffic::{write_csv, AccountingError, FlowStats, ReportRow, Source, SourceError};

/// Ethertype carried by generated frames (IEEE local experimental).
pub const ETHERTYPE_SIM: u16 = 0x88B5;
/// Stream id of the CSFQ dropper; sources use `SOURCE_STREAM_BASE + index`.
pub const CSFQ_STREAM: u64 = 1;
pub const SOURCE_STREAM_BASE: u64 = 0x1000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tc(#[from] TcError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error("trace: {0}")]
    Trace(#[from] io::Error),
    #[error("no node named {0}")]
    UnknownNode(String),
}

pub fn host_mac(subscriber: u16, index: usize) -> MacAddress {
    MacAddress::local((u32::from(subscriber) << 8) | (index as u32 + 1))
}

pub fn server_mac() -> MacAddress {
    MacAddress::local(0x00ff_ff00)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketMeta {
    pub subscriber: Option<u16>,
    pub seq: u64,
    /// Injection time at the source host.
    pub sent_at: Option<SimTime>,
    /// Untagged size, the unit of subscriber accounting.
    pub host_len: usize,
    /// Departure from the inner scheduler at `olt_c`.
    pub inner_departure: Option<SimTime>,
    /// Whether drops and deliveries count toward subscriber statistics.
    pub accounted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub frame: EthernetFrame,
    pub meta: PacketMeta,
}

impl QueueItem for Packet {
    fn wire_len(&self) -> usize {
        self.frame.wire_len()
    }

    fn outer_vid(&self) -> Option<u16> {
        self.frame.outer_vid().map(Vid::get)
    }

    fn tag_depth(&self) -> usize {
        self.frame.depth()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Plain,
    Inner,
    Uplink,
}

#[derive(Debug)]
struct Port {
    peer: (usize, usize),
    rate_bps: u64,
    delay_ns: u64,
    tc: TrafficControl<Packet>,
    busy: bool,
    wake: Option<SimTime>,
    stage: Stage,
}

#[derive(Debug)]
enum Role {
    Host { subscriber: u16, index: usize },
    Server,
    Switch(SwitchNode),
}

#[derive(Debug)]
struct Node {
    name: String,
    role: Role,
    ports: Vec<Port>,
}

#[derive(Debug)]
enum NetEvent {
    Emit(usize),
    Inject { node: usize, packet: Packet },
    Arrive { node: usize, port: usize, packet: Packet },
    TxDone { node: usize, port: usize },
    Wake { node: usize, port: usize },
}

enum TraceSink {
    Off,
    Hex(String),
    Pcap(PcapWriter<Vec<u8>>),
}

/// A frame that reached a host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub host: (u16, usize),
    pub time: SimTime,
    pub frame: EthernetFrame,
}

struct SourceSlot {
    source: Source,
    host: usize,
    next: Option<(SimTime, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShaperVerdict {
    pub vid: u16,
    pub plan: PlanKind,
    pub rate_bps: u64,
    pub bucket_bits: u64,
    pub departures: usize,
    pub worst_excess_bits: i64,
    pub conformant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopReport {
    pub node: String,
    pub port: usize,
    pub discipline: &'static str,
    pub counters: HopCounters,
    pub queued_bytes: u64,
}

impl HopReport {
    pub fn conserves(&self) -> bool {
        self.counters.conserves(self.queued_bytes)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub end: SimTime,
    pub rows: Vec<ReportRow>,
    pub stats: BTreeMap<u16, FlowStats>,
    pub verdicts: Vec<ShaperVerdict>,
    pub hops: Vec<HopReport>,
    pub fdb: Vec<(String, FdbRow)>,
    pub integrity_checked: u64,
    pub integrity_violations: u64,
    pub format_errors: u64,
    pub classification_errors: u64,
    pub events: u64,
    pub trace: Option<Vec<u8>>,
}

impl RunReport {
    pub fn row(&self, subscriber: u16) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.subscriber == subscriber)
    }

    pub fn verdict(&self, vid: u16) -> Option<&ShaperVerdict> {
        self.verdicts.iter().find(|v| v.vid == vid)
    }

    pub fn conserved(&self) -> bool {
        self.hops.iter().all(HopReport::conserves)
    }

    pub fn all_conformant(&self) -> bool {
        self.verdicts.iter().all(|v| v.conformant)
    }

    pub fn report_csv(&self) -> String {
        write_csv(&self.rows)
    }

    pub fn verdicts_csv(&self) -> String {
        let mut o = String::from("vid,plan,rate_bps,bucket_bits,departures,worst_excess_bits,conformant\n");
        for v in &self.verdicts {
            let _ = writeln!(
                o,
                "{},{},{},{},{},{},{}",
                v.vid, v.plan, v.rate_bps, v.bucket_bits, v.departures, v.worst_excess_bits, v.conformant
            );
        }
        o
    }

    pub fn fdb_csv(&self) -> String {
        let mut o = String::from("node,vid,mac,port,age_ns,static\n");
        for (node, r) in &self.fdb {
            let _ = writeln!(o, "{node},{},{},{},{},{}", r.vid, r.mac, r.port, r.age_ns, r.fixed);
        }
        o
    }

    pub fn summary(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "end_ns {}", self.end.as_nanos());
        let _ = writeln!(o, "events {}", self.events);
        let _ = writeln!(o, "conservation {}", if self.conserved() { "ok" } else { "VIOLATED" });
        let _ = writeln!(o, "two_stage_checked {}", self.integrity_checked);
        let _ = writeln!(o, "two_stage_violations {}", self.integrity_violations);
        let _ = writeln!(o, "format_errors {}", self.format_errors);
        let _ = writeln!(o, "classification_errors {}", self.classification_errors);
        for h in &self.hops {
            let c = h.counters;
            let _ = writeln!(
                o,
                "hop {}:{} {} in={} out={} drop={} queued={}",
                h.node, h.port, h.discipline, c.in_bytes, c.out_bytes, c.drop_bytes, h.queued_bytes
            );
        }
        o
    }
}

/// Outcome of the no-disadvantage comparison for one shared member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisadvantageVerdict {
    pub subscriber: u16,
    pub goodput_bps: f64,
    pub reference_bps: Option<f64>,
    pub pass: bool,
}

pub const NO_DISADVANTAGE_EPSILON: f64 = 0.02;

/// Every shared member must reach at least `(1 - eps)` of the goodput it got
/// as a standalone legacy subscriber in `reference`.
pub fn no_disadvantage_check(run: &[ReportRow], reference: &[ReportRow], eps: f64) -> Vec<DisadvantageVerdict> {
    run.iter()
        .filter(|r| r.plan == PlanKind::Shared.to_string())
        .map(|r| {
            let reference_bps = reference.iter().find(|x| x.subscriber == r.subscriber).map(|x| x.goodput_bps);
            let pass = reference_bps.is_some_and(|g| r.goodput_bps >= (1.0 - eps) * g);
            DisadvantageVerdict { subscriber: r.subscriber, goodput_bps: r.goodput_bps, reference_bps, pass }
        })
        .collect()
}

pub struct Network {
    cfg: ScenarioConfig,
    nodes: Vec<Node>,
    queue: EventQueue<NetEvent>,
    sources: Vec<SourceSlot>,
    stats: BTreeMap<u16, FlowStats>,
    csfq_rng: RngStream,
    hosts: BTreeMap<(u16, usize), usize>,
    server: usize,
    olt: usize,
    olt_c: Option<usize>,
    receipts: Vec<Receipt>,
    trace: TraceSink,
    integrity_checked: u64,
    integrity_violations: u64,
    seq: u64,
}

impl Network {
    /// Builds the topology for a validated configuration.
    pub fn build(cfg: &ScenarioConfig) -> Result<Network, NetworkError> {
        cfg.validate()?;
        let seed = cfg.run.seed;
        let trace = match cfg.outputs.trace {
            TraceMode::None => TraceSink::Off,
            TraceMode::Hex => TraceSink::Hex(String::new()),
            TraceMode::Pcap => TraceSink::Pcap(PcapWriter::new(Vec::new())?),
        };
        let mut net = Network {
            cfg: cfg.clone(),
            nodes: Vec::new(),
            queue: EventQueue::new(),
            sources: Vec::new(),
            stats: BTreeMap::new(),
            csfq_rng: RngStream::new(seed, CSFQ_STREAM),
            hosts: BTreeMap::new(),
            server: 0,
            olt: 0,
            olt_c: None,
            receipts: Vec::new(),
            trace,
            integrity_checked: 0,
            integrity_violations: 0,
            seq: 0,
        };
        let topo = cfg.topology.clone();
        let aging = topo.aging_ns;
        let access = topo.access;
        let uplink = topo.uplink;

        net.server = net.add_node("server", Role::Server);
        net.olt = net.add_node("olt", Role::Switch(SwitchNode::new("olt", aging)));

        let legacy: Vec<u16> = cfg.legacy_ids().collect();
        let mut up_vids = legacy.clone();
        let mut bank = ShaperBank::new();
        for s in &legacy {
            let sub = cfg.subscribers[s];
            bank.add_shaper(*s, TokenBucketParams::new(sub.token_rate_bps, sub.bucket_bits)?);
        }
        if let Some(g) = &cfg.group {
            up_vids.push(g.svid);
            let rate = cfg.group_tbf_rate().expect("group present");
            let bucket = cfg.group_tbf_bucket().expect("group present");
            bank.add_shaper(g.svid, TokenBucketParams::new(rate, bucket)?);
        }
        let up_port = net.switch_port(net.olt, PortRole::trunk(up_vids.iter().copied()));
        net.link(
            (net.olt, up_port, TrafficControl::Shapers(bank), Stage::Uplink),
            (net.server, TrafficControl::fifo()),
            uplink.rate_bps,
            uplink.delay_ns,
        );
        for &v in &up_vids {
            net.fdb_static(net.olt, v, up_port);
        }

        if let Some(g) = &cfg.group {
            let olt_c = net.add_node("olt_c", Role::Switch(SwitchNode::new("olt_c", aging)));
            net.olt_c = Some(olt_c);
            let svid = Vid::new(g.svid).expect("validated");
            let st = net.switch_port(net.olt, PortRole::STrunk { svid, members: g.members.iter().copied().collect() });
            let inner_port = net.switch_port(olt_c, PortRole::trunk(g.members.iter().copied()));
            let inner_rate = cfg.inner_rate().expect("group present");
            let tc = match g.scheduler {
                SchedulerKind::Drr => {
                    let flows: Vec<(u16, u64)> =
                        g.members.iter().map(|m| (*m, cfg.subscribers[m].token_rate_bps)).collect();
                    TrafficControl::Drr(DrrScheduler::with_flows(MAX_FRAME_BYTES, &flows)?)
                }
                SchedulerKind::Csfq => TrafficControl::Csfq(CsfqQueue::new(
                    CsfqParams { window_ns: g.csfq_window_ns, link_rate_bps: inner_rate },
                    &g.members,
                )),
            };
            net.link_ports(
                (olt_c, inner_port, tc, Stage::Inner),
                (net.olt, st, TrafficControl::fifo()),
                inner_rate,
                topo.inner_delay_ns,
            );
            for &m in &g.members {
                net.fdb_static(olt_c, m, inner_port);
            }
        }

        let mut per_sub_sources: BTreeMap<u16, usize> = BTreeMap::new();
        for sub in cfg.subscribers.values() {
            let onu_name = format!("onu{}", sub.id);
            let onu = net.add_node(&onu_name, Role::Switch(SwitchNode::new(onu_name.clone(), aging)));
            let vid = Vid::new(sub.id).expect("validated");
            let (parent, parent_role) = match sub.plan {
                PlanKind::Legacy => (net.olt, PortRole::trunk([sub.id])),
                PlanKind::Shared => (net.olt_c.expect("group present"), PortRole::trunk([sub.id])),
            };
            let onu_up = net.switch_port(onu, PortRole::trunk([sub.id]));
            let parent_port = net.switch_port(parent, parent_role);
            net.link_ports(
                (onu, onu_up, TrafficControl::fifo(), Stage::Plain),
                (parent, parent_port, TrafficControl::fifo()),
                access.rate_bps,
                access.delay_ns,
            );
            net.fdb_static(onu, sub.id, onu_up);
            for i in 0..topo.hosts_per_subscriber {
                let host = net.add_node(&format!("host{}.{i}", sub.id), Role::Host { subscriber: sub.id, index: i });
                net.hosts.insert((sub.id, i), host);
                let p = net.switch_port(onu, PortRole::Access { vid });
                net.link(
                    (onu, p, TrafficControl::fifo(), Stage::Plain),
                    (host, TrafficControl::fifo()),
                    access.rate_bps,
                    access.delay_ns,
                );
            }
            let plan = sub.plan.to_string();
            net.stats.insert(sub.id, FlowStats::new(sub.id, plan, cfg.warmup_time(), cfg.run.window_ns));
            per_sub_sources.insert(sub.id, 0);
        }

        for (&n, spec) in &cfg.sources {
            let k = per_sub_sources.get_mut(&spec.subscriber).expect("validated");
            let host = net.hosts[&(spec.subscriber, *k % topo.hosts_per_subscriber)];
            *k += 1;
            let rng = RngStream::new(seed, SOURCE_STREAM_BASE + u64::from(n));
            let mut source = Source::new(spec.clone(), rng)?;
            let next = source.next_arrival();
            let slot = net.sources.len();
            if let Some((t, _)) = next {
                net.queue.schedule(t, EventKind::Timer, NetEvent::Emit(slot))?;
            }
            net.sources.push(SourceSlot { source, host, next });
        }
        Ok(net)
    }

    fn add_node(&mut self, name: &str, role: Role) -> usize {
        self.nodes.push(Node { name: name.to_string(), role, ports: Vec::new() });
        self.nodes.len() - 1
    }

    fn switch_port(&mut self, node: usize, role: PortRole) -> usize {
        match &mut self.nodes[node].role {
            Role::Switch(sw) => sw.add_port(role),
            _ => unreachable!("ports with roles live on switches"),
        }
    }

    fn fdb_static(&mut self, node: usize, vid: u16, port: usize) {
        if let Role::Switch(sw) = &mut self.nodes[node].role {
            sw.fdb.install_static(vid, server_mac(), port);
        }
    }

    /// Connects a switch port to a single-port end node.
    fn link(
        &mut self,
        a: (usize, usize, TrafficControl<Packet>, Stage),
        b: (usize, TrafficControl<Packet>),
        rate_bps: u64,
        delay_ns: u64,
    ) {
        let b_port = self.nodes[b.0].ports.len();
        self.link_ports(a, (b.0, b_port, b.1), rate_bps, delay_ns);
    }

    fn link_ports(
        &mut self,
        (an, ap, atc, stage): (usize, usize, TrafficControl<Packet>, Stage),
        (bn, bp, btc): (usize, usize, TrafficControl<Packet>),
        rate_bps: u64,
        delay_ns: u64,
    ) {
        let mk = |peer, tc, stage| Port { peer, rate_bps, delay_ns, tc, busy: false, wake: None, stage };
        debug_assert_eq!(self.nodes[an].ports.len(), ap);
        debug_assert_eq!(self.nodes[bn].ports.len(), bp);
        self.nodes[an].ports.push(mk((bn, bp), atc, stage));
        self.nodes[bn].ports.push(mk((an, ap), btc, Stage::Plain));
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn hosts(&self) -> impl Iterator<Item = (u16, usize)> + '_ {
        self.hosts.keys().copied()
    }

    /// The queue discipline on `olt_c` toward `olt`, if a group exists.
    pub fn inner_discipline(&self) -> Option<&TrafficControl<Packet>> {
        let olt_c = self.olt_c?;
        self.nodes[olt_c].ports.iter().find(|p| p.stage == Stage::Inner).map(|p| &p.tc)
    }

    pub fn uplink_discipline(&self) -> &TrafficControl<Packet> {
        &self.nodes[self.olt].ports.iter().find(|p| p.stage == Stage::Uplink).expect("uplink exists").tc
    }

    pub fn switch(&self, name: &str) -> Option<&SwitchNode> {
        self.nodes.iter().find(|n| n.name == name).and_then(|n| match &n.role {
            Role::Switch(sw) => Some(sw),
            _ => None,
        })
    }

    /// Frames delivered to hosts so far.
    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn take_receipts(&mut self) -> Vec<Receipt> {
        std::mem::take(&mut self.receipts)
    }

    /// Sends `frame` out of a host or the server at `at`, outside subscriber
    /// accounting. Host frames must be untagged; server frames tagged.
    pub fn inject(&mut self, from: &str, frame: EthernetFrame, at: SimTime) -> Result<(), NetworkError> {
        let node =
            self.nodes.iter().position(|n| n.name == from).ok_or_else(|| NetworkError::UnknownNode(from.into()))?;
        self.seq += 1;
        let meta = PacketMeta {
            subscriber: None,
            seq: self.seq,
            sent_at: Some(at),
            host_len: frame.wire_len(),
            inner_departure: None,
            accounted: false,
        };
        self.queue.schedule(at, EventKind::Timer, NetEvent::Inject { node, packet: Packet { frame, meta } })?;
        Ok(())
    }

    /// Runs the configured duration and summarizes.
    pub fn run(mut self) -> Result<RunReport, NetworkError> {
        let end = SimTime::from_nanos(self.cfg.run.duration_ns);
        self.run_until(end)?;
        Ok(self.report(end))
    }

    pub fn run_until(&mut self, until: SimTime) -> Result<(), NetworkError> {
        while let Some((_, ev)) = self.queue.pop_until(until) {
            self.handle(ev)?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: NetEvent) -> Result<(), NetworkError> {
        match ev {
            NetEvent::Emit(slot) => self.emit(slot),
            NetEvent::Inject { node, packet } => self.enqueue(node, 0, packet),
            NetEvent::Arrive { node, port, packet } => self.arrive(node, port, packet),
            NetEvent::TxDone { node, port } => {
                self.nodes[node].ports[port].busy = false;
                self.try_transmit(node, port)
            }
            NetEvent::Wake { node, port } => {
                let p = &mut self.nodes[node].ports[port];
                if p.wake == Some(self.queue.now()) {
                    p.wake = None;
                }
                self.try_transmit(node, port)
            }
        }
    }

    fn emit(&mut self, slot: usize) -> Result<(), NetworkError> {
        let now = self.queue.now();
        let s = &mut self.sources[slot];
        let Some((_, size)) = s.next.take() else {
            return Ok(());
        };
        let subscriber = s.source.spec().subscriber;
        let host = s.host;
        let Role::Host { index, .. } = self.nodes[host].role else { unreachable!("sources attach to hosts") };
        s.next = s.source.next_arrival();
        if let Some((t, _)) = s.next {
            self.queue.schedule(t, EventKind::Timer, NetEvent::Emit(slot))?;
        }

        self.seq += 1;
        let mut payload = vec![0u8; size - 18];
        payload[..8].copy_from_slice(&self.seq.to_be_bytes());
        let frame = EthernetFrame::new(server_mac(), host_mac(subscriber, index), ETHERTYPE_SIM, payload);
        let meta = PacketMeta {
            subscriber: Some(subscriber),
            seq: self.seq,
            sent_at: Some(now),
            host_len: size,
            inner_departure: None,
            accounted: true,
        };
        self.stats.get_mut(&subscriber).expect("validated").record_offer(size);
        self.enqueue(host, 0, Packet { frame, meta })
    }

    fn note_drop(&mut self, meta: &PacketMeta) {
        if let (true, Some(s)) = (meta.accounted, meta.subscriber) {
            if let Some(st) = self.stats.get_mut(&s) {
                st.record_drop(meta.host_len);
            }
        }
    }

    fn enqueue(&mut self, node: usize, port: usize, packet: Packet) -> Result<(), NetworkError> {
        let now = self.queue.now();
        let offer = self.nodes[node].ports[port].tc.offer(packet, now, &mut self.csfq_rng);
        if let Offer::Dropped(p, _) = offer {
            self.note_drop(&p.meta);
        }
        self.try_transmit(node, port)
    }

    fn arrive(&mut self, node: usize, port: usize, packet: Packet) -> Result<(), NetworkError> {
        let now = self.queue.now();
        if matches!(self.cfg.outputs.trace_scope, TraceScope::All) {
            self.record_trace(now, node, port, Direction::Rx, &packet.frame)?;
        }
        match &mut self.nodes[node].role {
            Role::Server => {
                if packet.meta.accounted {
                    if let Some(s) = packet.meta.subscriber {
                        let st = self.stats.get_mut(&s).expect("known subscriber");
                        st.record_delivery(packet.meta.host_len, packet.meta.sent_at, now)?;
                    }
                }
                Ok(())
            }
            Role::Host { subscriber, index } => {
                self.receipts.push(Receipt { host: (*subscriber, *index), time: now, frame: packet.frame });
                Ok(())
            }
            Role::Switch(sw) => {
                let meta = packet.meta;
                let frame = match sw.ingress(port, packet.frame) {
                    Ok(f) => f,
                    Err(_) => {
                        self.note_drop(&meta);
                        return Ok(());
                    }
                };
                sw.learn(&frame, port, now);
                let outs = sw.forward(&frame, port, now);
                let mut copies = Vec::with_capacity(outs.len());
                for out in outs {
                    match sw.egress(out, frame.clone()) {
                        Ok(f) => copies.push((out, Packet { frame: f, meta: meta.clone() })),
                        Err(_) => continue,
                    }
                }
                for (out, p) in copies {
                    self.enqueue(node, out, p)?;
                }
                Ok(())
            }
        }
    }

    fn try_transmit(&mut self, node: usize, port: usize) -> Result<(), NetworkError> {
        let now = self.queue.now();
        let p = &mut self.nodes[node].ports[port];
        if p.busy {
            return Ok(());
        }
        match p.tc.poll(now) {
            Poll::Ready(mut packet) => {
                let stage = p.stage;
                let ser = serialization_ns(packet.frame.wire_bits(), p.rate_bps);
                let (peer_node, peer_port) = p.peer;
                let delay = p.delay_ns;
                p.busy = true;
                match stage {
                    Stage::Inner => packet.meta.inner_departure = Some(now),
                    Stage::Uplink => self.check_two_stage(&packet, now),
                    Stage::Plain => {}
                }
                if stage == Stage::Uplink || self.cfg.outputs.trace_scope == TraceScope::All {
                    self.record_trace(now, node, port, Direction::Tx, &packet.frame)?;
                }
                self.queue.schedule(now + ser, EventKind::Departure, NetEvent::TxDone { node, port })?;
                self.queue.schedule(
                    now + ser + delay,
                    EventKind::Arrival,
                    NetEvent::Arrive { node: peer_node, port: peer_port, packet },
                )?;
            }
            Poll::Wait(t) => {
                if p.wake.is_none_or(|w| w < now || t < w) {
                    p.wake = Some(t);
                    self.queue.schedule(t, EventKind::Departure, NetEvent::Wake { node, port })?;
                }
            }
            Poll::Idle => {}
        }
        Ok(())
    }

    /// Shared-plan frames on the uplink must carry `[S-TAG group, C-TAG
    /// member]` and must have left the inner scheduler first.
    fn check_two_stage(&mut self, packet: &Packet, now: SimTime) {
        let (Some(s), true) = (packet.meta.subscriber, packet.meta.accounted) else {
            return;
        };
        let Some(sub) = self.cfg.subscribers.get(&s) else {
            return;
        };
        let tags = packet.frame.tags();
        let ok = match (sub.plan, &self.cfg.group) {
            (PlanKind::Shared, Some(g)) => {
                tags.len() == 2
                    && tags[0].tpid == TPID_STAG
                    && tags[0].vid.get() == g.svid
                    && tags[1].tpid == TPID_CTAG
                    && tags[1].vid.get() == s
                    && packet.meta.inner_departure.is_some_and(|t| t <= now)
            }
            _ => tags.len() == 1 && tags[0].tpid == TPID_CTAG && tags[0].vid.get() == s,
        };
        self.integrity_checked += 1;
        if !ok {
            self.integrity_violations += 1;
        }
    }

    fn record_trace(
        &mut self,
        now: SimTime,
        node: usize,
        port: usize,
        dir: Direction,
        frame: &EthernetFrame,
    ) -> io::Result<()> {
        match &mut self.trace {
            TraceSink::Off => Ok(()),
            TraceSink::Hex(buf) => {
                buf.push_str(&hex_line(now, &self.nodes[node].name, port, dir, &frame.serialize()));
                buf.push('\n');
                Ok(())
            }
            TraceSink::Pcap(w) => w.write_frame(now, &frame.serialize()),
        }
    }

    /// Summarizes the state at `end`; the network can keep running after.
    pub fn snapshot(&self, end: SimTime) -> RunReport {
        let rows = self.stats.values().map(|s| s.summarize(end)).collect();
        let group_svid = self.cfg.group.as_ref().map(|g| g.svid);
        let verdicts = match self.uplink_discipline() {
            TrafficControl::Shapers(bank) => bank
                .verdicts()
                .into_iter()
                .map(|(vid, p, v)| ShaperVerdict {
                    vid,
                    plan: if Some(vid) == group_svid { PlanKind::Shared } else { PlanKind::Legacy },
                    rate_bps: p.rate_bps,
                    bucket_bits: p.bucket_bits,
                    departures: v.departures,
                    worst_excess_bits: v.worst_excess_bits,
                    conformant: v.conformant,
                })
                .collect(),
            _ => Vec::new(),
        };
        let mut hops = Vec::new();
        let mut fdb = Vec::new();
        let mut format_errors = 0;
        for n in &self.nodes {
            for (i, p) in n.ports.iter().enumerate() {
                hops.push(HopReport {
                    node: n.name.clone(),
                    port: i,
                    discipline: p.tc.kind(),
                    counters: p.tc.counters(),
                    queued_bytes: p.tc.queued_bytes(),
                });
            }
            if let Role::Switch(sw) = &n.role {
                format_errors += sw.format_errors();
                fdb.extend(sw.fdb.dump(end).into_iter().map(|r| (n.name.clone(), r)));
            }
        }
        let classification_errors = match self.inner_discipline() {
            Some(TrafficControl::Drr(d)) => d.classification_errors(),
            Some(TrafficControl::Csfq(q)) => q.classification_errors(),
            _ => 0,
        };
        let trace = match &self.trace {
            TraceSink::Off => None,
            TraceSink::Hex(s) => Some(s.clone().into_bytes()),
            TraceSink::Pcap(w) => Some(w.get_ref().clone()),
        };
        RunReport {
            end,
            rows,
            stats: self.stats.clone(),
            verdicts,
            hops,
            fdb,
            integrity_checked: self.integrity_checked,
            integrity_violations: self.integrity_violations,
            format_errors,
            classification_errors,
            events: self.queue.executed(),
            trace,
        }
    }

    fn report(&self, end: SimTime) -> RunReport {
        self.snapshot(end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::parse(text).unwrap()
    }

    const MIXED: &str = "
        subscribers.5.plan = legacy
        subscribers.5.token_rate = 10Mbps
        subscribers.5.bucket_size = 1Mb
        subscribers.6.plan = legacy
        subscribers.6.token_rate = 10Mbps
        subscribers.6.bucket_size = 1Mb
        subscribers.10.plan = shared
        subscribers.10.token_rate = 10Mbps
        subscribers.10.bucket_size = 1Mb
        subscribers.11.plan = shared
        subscribers.11.token_rate = 10Mbps
        subscribers.11.bucket_size = 1Mb
        subscribers.12.plan = shared
        subscribers.12.token_rate = 20Mbps
        subscribers.12.bucket_size = 1Mb
        subscribers.13.plan = shared
        subscribers.13.token_rate = 40Mbps
        subscribers.13.bucket_size = 1Mb
        group.svid = 100
        group.members = 10,11,12,13
        run.duration = 1s
    ";

    #[test]
    fn two_legacy_four_shared_gives_three_shapers() {
        let net = Network::build(&cfg(MIXED)).unwrap();
        match net.uplink_discipline() {
            TrafficControl::Shapers(b) => {
                let vids: Vec<u16> = b.shapers().map(|(v, _)| v).collect();
                assert_eq!(vids, vec![5, 6, 100]);
            }
            other => panic!("{}", other.kind()),
        }
        match net.inner_discipline() {
            Some(TrafficControl::Drr(d)) => {
                let q: Vec<usize> = d.flows().map(|f| f.quantum()).collect();
                assert_eq!(q, vec![1522, 1522, 3044, 6088]);
            }
            _ => panic!("expected drr"),
        }
    }

    #[test]
    fn legacy_only_is_degenerate() {
        let net = Network::build(&cfg(
            "subscribers.5.plan = legacy\nsubscribers.5.token_rate = 1Mbps\nsubscribers.5.bucket_size = 1Mb\n",
        ))
        .unwrap();
        assert!(net.inner_discipline().is_none());
        assert!(net.switch("olt_c").is_none());
    }

    #[test]
    fn zero_load_delay_is_serialization_plus_propagation() {
        // one 1250-byte frame through host -> onu -> olt -> server
        let c = cfg("
            topology.access_rate = 100Mbps
            topology.access_delay = 5us
            topology.uplink_rate = 1Gbps
            topology.uplink_delay = 20us
            subscribers.5.plan = legacy
            subscribers.5.token_rate = 10Mbps
            subscribers.5.bucket_size = 1Mb
            sources.0.subscriber = 5
            sources.0.kind = cbr
            sources.0.rate = 10Mbps
            sources.0.frame_size = 1250
            sources.0.stop = 1ns
            run.duration = 10ms
            run.warmup = 0
        ");
        let report = Network::build(&c).unwrap().run().unwrap();
        let st = &report.stats[&5];
        assert_eq!(st.delivered_frames, 1);
        // untagged on host link, C-tagged from the onu on
        let oracle = 1250 * 8 * 10 + 5_000 + 1254 * 8 * 10 + 5_000 + 1254 * 8 + 20_000;
        assert_eq!(st.delays(), &[oracle]);
    }

    #[test]
    fn shared_frames_are_stacked_and_two_staged() {
        let text = format!(
            "{MIXED}
            sources.0.subscriber = 10
            sources.0.kind = cbr
            sources.0.rate = 30Mbps
            sources.1.subscriber = 5
            sources.1.kind = cbr
            sources.1.rate = 5Mbps
            outputs.trace = hex
        "
        );
        let report = Network::build(&cfg(&text)).unwrap().run().unwrap();
        assert!(report.integrity_checked > 100);
        assert_eq!(report.integrity_violations, 0);
        assert!(report.conserved());
        assert!(report.all_conformant());
        let trace = String::from_utf8(report.trace.unwrap()).unwrap();
        let first_shared = trace.lines().find(|l| l.contains("88A80064")).unwrap();
        assert!(first_shared.contains("88A80064810000"));
        // sent - delivered - dropped is what is still in flight
        let st = &report.stats[&10];
        assert!(st.delivered_bytes + st.dropped_bytes <= st.offered_bytes);
    }

    #[test]
    fn static_server_entries_in_fdb() {
        let report = Network::build(&cfg(MIXED)).unwrap().run().unwrap();
        let olt: Vec<_> = report.fdb.iter().filter(|(n, _)| n == "olt").map(|(_, r)| r.vid).collect();
        assert_eq!(olt, vec![5, 6, 100]);
        assert!(report.fdb.iter().all(|(_, r)| r.fixed && r.mac == server_mac()));
    }

    #[test]
    fn single_member_takes_group_rate() {
        let text = format!(
            "{MIXED}
            sources.0.subscriber = 11
            sources.0.kind = cbr
            sources.0.rate = 150Mbps
        "
        );
        let report = Network::build(&cfg(&text)).unwrap().run().unwrap();
        let g = report.row(11).unwrap().goodput_bps;
        assert!(g > 0.95 * 80e6, "{g}");
        // at most the group bucket on top of the rate
        assert!(g <= 80e6 + 4e6 / 0.9, "{g}");
    }
}
