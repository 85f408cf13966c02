//! VLAN-aware learning bridge with per-port tag push/pop roles.
//!
//! The forwarding database is keyed on the outermost VID only; inner tags are
//! invisible to learning and flooding. A broadcast therefore stays inside the
//! outermost VLAN it travels in and never crosses into another hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::frame::{EthernetFrame, FrameError, MacAddress, Vid, TPID_STAG};
use crate::sim::{SimTime, NANOS_PER_SEC};

pub type PortId = usize;

pub const DEFAULT_AGING_NS: u64 = 300 * NANOS_PER_SEC;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwitchError {
    #[error("port {0} does not exist")]
    NoSuchPort(PortId),
    #[error("untagged frame on {role} port {port}")]
    Untagged { port: PortId, role: &'static str },
    #[error("tagged frame on access port {0}")]
    TaggedOnAccess(PortId),
    #[error("vid {vid} not carried by port {port}")]
    NotMember { port: PortId, vid: u16 },
    #[error("frame on strunk port {port} lacks its S-TAG")]
    MissingStag { port: PortId },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// What a port does to tags crossing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PortRole {
    /// Faces a host: pushes the C-TAG on ingress, pops it on egress.
    Access { vid: Vid },
    /// Faces a C-tagged segment: pushes the group S-TAG on ingress over any
    /// member C-VID, pops it on egress.
    STrunk { svid: Vid, members: BTreeSet<u16> },
    /// Passes tagged frames through unchanged for the listed outer VIDs.
    Trunk { vids: BTreeSet<u16> },
}

impl PortRole {
    pub fn trunk<I: IntoIterator<Item = u16>>(vids: I) -> Self {
        PortRole::Trunk { vids: vids.into_iter().collect() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PortRole::Access { .. } => "access",
            PortRole::STrunk { .. } => "strunk",
            PortRole::Trunk { .. } => "trunk",
        }
    }

    /// Whether frames whose (post-ingress) outermost VID is `vid` may leave here.
    pub fn carries(&self, vid: u16) -> bool {
        match self {
            PortRole::Access { vid: v } => v.get() == vid,
            PortRole::STrunk { svid, .. } => svid.get() == vid,
            PortRole::Trunk { vids } => vids.contains(&vid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FdbEntry {
    pub port: PortId,
    pub last_seen: SimTime,
    /// Installed by configuration; never ages.
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FdbRow {
    pub vid: u16,
    pub mac: MacAddress,
    pub port: PortId,
    pub age_ns: u64,
    pub fixed: bool,
}

/// `(outer VID, MAC) -> port` with aging.
#[derive(Debug, Clone)]
pub struct ForwardingDatabase {
    entries: BTreeMap<(u16, MacAddress), FdbEntry>,
    aging_ns: u64,
}

impl Default for ForwardingDatabase {
    fn default() -> Self {
        Self::new(DEFAULT_AGING_NS)
    }
}

impl ForwardingDatabase {
    pub fn new(aging_ns: u64) -> Self {
        ForwardingDatabase { entries: BTreeMap::new(), aging_ns }
    }

    pub fn aging_ns(&self) -> u64 {
        self.aging_ns
    }

    pub fn learn(&mut self, vid: u16, mac: MacAddress, port: PortId, now: SimTime) {
        if mac.is_multicast() {
            return;
        }
        let fixed = self.entries.get(&(vid, mac)).is_some_and(|e| e.fixed);
        if fixed {
            return;
        }
        self.entries.insert((vid, mac), FdbEntry { port, last_seen: now, fixed: false });
    }

    pub fn install_static(&mut self, vid: u16, mac: MacAddress, port: PortId) {
        self.entries.insert((vid, mac), FdbEntry { port, last_seen: SimTime::ZERO, fixed: true });
    }

    fn expired(&self, e: &FdbEntry, now: SimTime) -> bool {
        !e.fixed && now.saturating_sub(e.last_seen) > self.aging_ns
    }

    pub fn lookup(&self, vid: u16, mac: MacAddress, now: SimTime) -> Option<PortId> {
        self.entries.get(&(vid, mac)).filter(|e| !self.expired(e, now)).map(|e| e.port)
    }

    /// Drops entries idle for longer than the aging time.
    pub fn purge(&mut self, now: SimTime) -> usize {
        let before = self.entries.len();
        let aging = self.aging_ns;
        self.entries.retain(|_, e| e.fixed || now.saturating_sub(e.last_seen) <= aging);
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dump(&self, now: SimTime) -> Vec<FdbRow> {
        self.entries
            .iter()
            .filter(|(_, e)| !self.expired(e, now))
            .map(|(&(vid, mac), e)| FdbRow {
                vid,
                mac,
                port: e.port,
                age_ns: now.saturating_sub(e.last_seen),
                fixed: e.fixed,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SwitchNode {
    pub name: String,
    ports: Vec<PortRole>,
    pub fdb: ForwardingDatabase,
    format_errors: u64,
}

impl fmt::Display for SwitchNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} ports)", self.name, self.ports.len())
    }
}

impl SwitchNode {
    pub fn new(name: impl Into<String>, aging_ns: u64) -> Self {
        SwitchNode { name: name.into(), ports: Vec::new(), fdb: ForwardingDatabase::new(aging_ns), format_errors: 0 }
    }

    pub fn add_port(&mut self, role: PortRole) -> PortId {
        self.ports.push(role);
        self.ports.len() - 1
    }

    pub fn port(&self, port: PortId) -> Option<&PortRole> {
        self.ports.get(port)
    }

    pub fn ports(&self) -> &[PortRole] {
        &self.ports
    }

    pub fn format_errors(&self) -> u64 {
        self.format_errors
    }

    fn role(&self, port: PortId) -> Result<&PortRole, SwitchError> {
        self.ports.get(port).ok_or(SwitchError::NoSuchPort(port))
    }

    fn count<T>(&mut self, r: Result<T, SwitchError>) -> Result<T, SwitchError> {
        if r.is_err() {
            self.format_errors += 1;
        }
        r
    }

    /// Applies the port's ingress tag operation.
    pub fn ingress(&mut self, port: PortId, mut frame: EthernetFrame) -> Result<EthernetFrame, SwitchError> {
        let r = (|| {
            match self.role(port)? {
                PortRole::Access { vid } => {
                    if frame.depth() > 0 {
                        return Err(SwitchError::TaggedOnAccess(port));
                    }
                    frame.push_tag(vid.get(), 0, false)?;
                }
                PortRole::STrunk { svid, members } => {
                    let outer = frame.outer_vid().ok_or(SwitchError::Untagged { port, role: "strunk" })?;
                    if !members.contains(&outer.get()) {
                        return Err(SwitchError::NotMember { port, vid: outer.get() });
                    }
                    frame.push_tag(svid.get(), 0, false)?;
                }
                PortRole::Trunk { vids } => {
                    let outer = frame.outer_vid().ok_or(SwitchError::Untagged { port, role: "trunk" })?;
                    if !vids.contains(&outer.get()) {
                        return Err(SwitchError::NotMember { port, vid: outer.get() });
                    }
                }
            }
            Ok(frame)
        })();
        self.count(r)
    }

    /// Records the frame's source under its outermost VID.
    pub fn learn(&mut self, frame: &EthernetFrame, in_port: PortId, now: SimTime) {
        if let Some(vid) = frame.outer_vid() {
            self.fdb.learn(vid.get(), frame.src, in_port, now);
        }
    }

    /// Egress ports for an ingress-processed frame. Known unicast goes to the
    /// learned port; everything else floods to ports carrying the outer VID.
    /// The ingress port is never part of the result.
    pub fn forward(&self, frame: &EthernetFrame, in_port: PortId, now: SimTime) -> Vec<PortId> {
        let Some(vid) = frame.outer_vid().map(Vid::get) else {
            return Vec::new();
        };
        if !frame.dst.is_multicast() {
            if let Some(port) = self.fdb.lookup(vid, frame.dst, now) {
                return if port == in_port { Vec::new() } else { vec![port] };
            }
        }
        self.ports.iter().enumerate().filter(|&(p, role)| p != in_port && role.carries(vid)).map(|(p, _)| p).collect()
    }

    /// Applies the port's egress tag operation.
    pub fn egress(&mut self, port: PortId, mut frame: EthernetFrame) -> Result<EthernetFrame, SwitchError> {
        let r = (|| {
            match self.role(port)? {
                PortRole::Access { vid } => {
                    let outer = frame.outer_vid().ok_or(SwitchError::Untagged { port, role: "access" })?;
                    if outer != *vid || frame.depth() != 1 {
                        return Err(SwitchError::NotMember { port, vid: outer.get() });
                    }
                    frame.pop_tag()?;
                }
                PortRole::STrunk { svid, .. } => {
                    let top = frame.tags().first().ok_or(SwitchError::Untagged { port, role: "strunk" })?;
                    if frame.depth() < 2 || top.tpid != TPID_STAG || top.vid != *svid {
                        return Err(SwitchError::MissingStag { port });
                    }
                    frame.pop_tag()?;
                }
                PortRole::Trunk { .. } => {}
            }
            Ok(frame)
        })();
        self.count(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vid(v: u16) -> Vid {
        Vid::new(v).unwrap()
    }

    fn host_frame(src: u32, dst: MacAddress) -> EthernetFrame {
        EthernetFrame::new(dst, MacAddress::local(src), 0x88B5, vec![0; 46])
    }

    fn ctagged(src: u32, dst: MacAddress, v: u16) -> EthernetFrame {
        let mut f = host_frame(src, dst);
        f.push_tag(v, 0, false).unwrap();
        f
    }

    #[test]
    fn access_ingress_pushes_ctag() {
        let mut sw = SwitchNode::new("onu", DEFAULT_AGING_NS);
        let p = sw.add_port(PortRole::Access { vid: vid(10) });
        let f = sw.ingress(p, host_frame(1, MacAddress::BROADCAST)).unwrap();
        assert_eq!(f.tags().len(), 1);
        assert_eq!(f.tags()[0].tpid, 0x8100);
        assert_eq!(f.outer_vid(), Some(vid(10)));
    }

    #[test]
    fn strunk_ingress_stacks_stag() {
        let mut sw = SwitchNode::new("olt", DEFAULT_AGING_NS);
        let p = sw.add_port(PortRole::STrunk { svid: vid(100), members: [10].into() });
        let f = sw.ingress(p, ctagged(1, MacAddress::BROADCAST, 10)).unwrap();
        let stack: Vec<(u16, u16)> = f.tags().iter().map(|t| (t.tpid, t.vid.get())).collect();
        assert_eq!(stack, vec![(0x88A8, 100), (0x8100, 10)]);
    }

    #[test]
    fn strunk_ingress_untagged_is_format_error() {
        let mut sw = SwitchNode::new("olt", DEFAULT_AGING_NS);
        let p = sw.add_port(PortRole::STrunk { svid: vid(100), members: [10].into() });
        assert!(matches!(sw.ingress(p, host_frame(1, MacAddress::BROADCAST)), Err(SwitchError::Untagged { .. })));
        assert_eq!(sw.format_errors(), 1);
    }

    #[test]
    fn learn_and_station_move() {
        let mut sw = SwitchNode::new("sw", DEFAULT_AGING_NS);
        for _ in 0..4 {
            sw.add_port(PortRole::trunk([100]));
        }
        let a = ctagged(0xA, MacAddress::BROADCAST, 100);
        sw.learn(&a, 2, SimTime::ZERO);
        assert_eq!(sw.fdb.lookup(100, a.src, SimTime::ZERO), Some(2));
        sw.learn(&a, 3, SimTime::from_nanos(10));
        assert_eq!(sw.fdb.lookup(100, a.src, SimTime::from_nanos(10)), Some(3));
        assert_eq!(sw.fdb.len(), 1);
    }

    #[test]
    fn aging_purges_idle_entries() {
        let mut sw = SwitchNode::new("sw", 1_000);
        sw.add_port(PortRole::trunk([100]));
        let a = ctagged(0xA, MacAddress::BROADCAST, 100);
        sw.learn(&a, 0, SimTime::ZERO);
        assert_eq!(sw.fdb.lookup(100, a.src, SimTime::from_nanos(1_000)), Some(0));
        assert_eq!(sw.fdb.lookup(100, a.src, SimTime::from_nanos(1_001)), None);
        assert_eq!(sw.fdb.purge(SimTime::from_nanos(1_001)), 1);
        assert!(sw.fdb.is_empty());
    }

    #[test]
    fn known_unicast_goes_to_learned_port() {
        let mut sw = SwitchNode::new("sw", DEFAULT_AGING_NS);
        for _ in 0..3 {
            sw.add_port(PortRole::trunk([100]));
        }
        let b = MacAddress::local(0xB);
        sw.learn(&ctagged(0xB, MacAddress::BROADCAST, 100), 2, SimTime::ZERO);
        assert_eq!(sw.forward(&ctagged(0xA, b, 100), 0, SimTime::ZERO), vec![2]);
        // reply to a previously seen source is never flooded
        assert_eq!(sw.forward(&ctagged(0xA, b, 100), 2, SimTime::ZERO), Vec::<PortId>::new());
    }

    #[test]
    fn flooding_is_scoped_to_outer_vid() {
        let mut sw = SwitchNode::new("olt", DEFAULT_AGING_NS);
        let st = sw.add_port(PortRole::STrunk { svid: vid(100), members: [10, 11].into() });
        let legacy = sw.add_port(PortRole::trunk([5]));
        let up = sw.add_port(PortRole::trunk([5, 100]));
        let f = sw.ingress(st, ctagged(1, MacAddress::BROADCAST, 10)).unwrap();
        assert_eq!(sw.forward(&f, st, SimTime::ZERO), vec![up]);
        let g = sw.ingress(legacy, ctagged(2, MacAddress::BROADCAST, 5)).unwrap();
        assert_eq!(sw.forward(&g, legacy, SimTime::ZERO), vec![up]);
        // from the uplink, an S-VLAN broadcast reaches only the strunk port
        let mut h = ctagged(3, MacAddress::BROADCAST, 10);
        h.push_tag(100, 0, false).unwrap();
        assert_eq!(sw.forward(&h, up, SimTime::ZERO), vec![st]);
    }

    #[test]
    fn egress_ops() {
        let mut sw = SwitchNode::new("olt", DEFAULT_AGING_NS);
        let st = sw.add_port(PortRole::STrunk { svid: vid(100), members: [10].into() });
        let acc = sw.add_port(PortRole::Access { vid: vid(10) });
        let mut stacked = ctagged(1, MacAddress::BROADCAST, 10);
        stacked.push_tag(100, 0, false).unwrap();
        let out = sw.egress(st, stacked).unwrap();
        assert_eq!(out.tags().len(), 1);
        assert_eq!(out.outer_vid(), Some(vid(10)));
        let out = sw.egress(acc, out).unwrap();
        assert_eq!(out.depth(), 0);
        assert!(matches!(sw.egress(acc, out), Err(SwitchError::Untagged { .. })));
    }

    #[test]
    fn never_forwards_out_ingress_port() {
        let mut sw = SwitchNode::new("sw", DEFAULT_AGING_NS);
        for _ in 0..5 {
            sw.add_port(PortRole::trunk([7]));
        }
        for p in 0..5 {
            let f = ctagged(p as u32, MacAddress::BROADCAST, 7);
            assert!(!sw.forward(&f, p, SimTime::ZERO).contains(&p));
        }
    }

    #[test]
    fn static_entries_do_not_age_or_move() {
        let mut fdb = ForwardingDatabase::new(10);
        let m = MacAddress::local(99);
        fdb.install_static(5, m, 1);
        fdb.learn(5, m, 2, SimTime::from_nanos(5));
        assert_eq!(fdb.lookup(5, m, SimTime::from_nanos(1_000_000)), Some(1));
        assert_eq!(fdb.purge(SimTime::from_nanos(1_000_000)), 0);
    }
}
