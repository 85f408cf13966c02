//! Ethernet II frames with an arbitrarily deep stack of 802.1Q / 802.1ad tags.
//!
//! Tags are stored outermost first. A single tag is always a C-TAG (0x8100);
//! in a deeper stack every tag except the innermost is an S-TAG (0x88A8).
//! [`EthernetFrame::push_tag`] and [`EthernetFrame::pop_tag`] keep that
//! discipline by construction, and [`EthernetFrame::parse`] rejects byte
//! streams that violate it.

use std::fmt;

use thiserror::Error;

/// TPID of a customer VLAN tag.
pub const TPID_CTAG: u16 = 0x8100;
/// TPID of a service VLAN tag.
pub const TPID_STAG: u16 = 0x88A8;

/// Largest VID that may be carried; 4095 is reserved.
pub const MAX_VID: u16 = 4094;

/// dst + src + ethertype.
pub const HEADER_LEN: usize = 14;
pub const TAG_LEN: usize = 4;
pub const FCS_LEN: usize = 4;
/// Smallest legal frame on the wire, FCS included.
pub const MIN_FRAME_LEN: usize = 64;
/// Largest frame a source may emit before any tag is pushed, FCS included.
pub const MAX_FRAME_BYTES: usize = 1522;
pub const MAX_FRAME_BITS: u64 = MAX_FRAME_BYTES as u64 * 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("vid {0} out of range 0..=4094")]
    VidRange(u16),
    #[error("pcp {0} out of range 0..=7")]
    PcpRange(u8),
    #[error("pop from untagged frame")]
    Underflow,
    #[error("truncated frame: {0} bytes")]
    Truncated(usize),
    #[error("FCS mismatch: expected {expected:#010x}, found {found:#010x}")]
    Checksum { expected: u32, found: u32 },
    #[error("tag stack violates TPID discipline at depth {depth}")]
    TpidDiscipline { depth: usize },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xff; 6]);

    pub fn is_broadcast(&self) -> bool {
        *self == Self::BROADCAST
    }

    pub fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 == 0x01
    }

    /// Locally administered unicast address with `id` in the low 32 bits.
    pub fn local(id: u32) -> Self {
        let b = id.to_be_bytes();
        MacAddress([0x02, 0x00, b[0], b[1], b[2], b[3]])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", m[0], m[1], m[2], m[3], m[4], m[5])
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// 12-bit VLAN identifier in `0..=4094`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vid(u16);

impl Vid {
    pub fn new(vid: u16) -> Result<Self, FrameError> {
        if vid > MAX_VID {
            return Err(FrameError::VidRange(vid));
        }
        Ok(Vid(vid))
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

impl fmt::Display for Vid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VlanTag {
    pub tpid: u16,
    pub pcp: u8,
    pub dei: bool,
    pub vid: Vid,
}

impl VlanTag {
    pub fn ctag(vid: Vid) -> Self {
        VlanTag { tpid: TPID_CTAG, pcp: 0, dei: false, vid }
    }

    pub fn stag(vid: Vid) -> Self {
        VlanTag { tpid: TPID_STAG, pcp: 0, dei: false, vid }
    }

    /// Tag control information: `pcp << 13 | dei << 12 | vid`.
    pub fn tci(&self) -> u16 {
        (u16::from(self.pcp) << 13) | (u16::from(self.dei) << 12) | self.vid.0
    }

    /// Splits a TCI back into its fields. VID 4095 is rejected.
    pub fn from_tci(tpid: u16, tci: u16) -> Result<Self, FrameError> {
        Ok(VlanTag { tpid, pcp: (tci >> 13) as u8, dei: tci & 0x1000 != 0, vid: Vid::new(tci & 0x0fff)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetFrame {
    pub dst: MacAddress,
    pub src: MacAddress,
    tags: Vec<VlanTag>,
    pub ethertype: u16,
    pub payload: Vec<u8>,
}

impl EthernetFrame {
    pub fn new(dst: MacAddress, src: MacAddress, ethertype: u16, payload: Vec<u8>) -> Self {
        EthernetFrame { dst, src, tags: Vec::new(), ethertype, payload }
    }

    /// Outermost first.
    pub fn tags(&self) -> &[VlanTag] {
        &self.tags
    }

    pub fn depth(&self) -> usize {
        self.tags.len()
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// Pushes a new outermost tag. The first tag on a frame is a C-TAG; any
    /// later one is an S-TAG stacked over the existing ones.
    pub fn push_tag(&mut self, vid: u16, pcp: u8, dei: bool) -> Result<(), FrameError> {
        let vid = Vid::new(vid)?;
        if pcp > 7 {
            return Err(FrameError::PcpRange(pcp));
        }
        let tpid = if self.tags.is_empty() { TPID_CTAG } else { TPID_STAG };
        self.tags.insert(0, VlanTag { tpid, pcp, dei, vid });
        Ok(())
    }

    pub fn pop_tag(&mut self) -> Result<VlanTag, FrameError> {
        if self.tags.is_empty() {
            return Err(FrameError::Underflow);
        }
        Ok(self.tags.remove(0))
    }

    /// VID of the outermost tag; the field every single-tag consumer looks at.
    pub fn outer_vid(&self) -> Option<Vid> {
        self.tags.first().map(|t| t.vid)
    }

    /// VID of the innermost tag (the C-TAG once any tag is present).
    pub fn inner_vid(&self) -> Option<Vid> {
        self.tags.last().map(|t| t.vid)
    }

    /// Bytes on the wire, FCS included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + TAG_LEN * self.tags.len() + self.payload.len() + FCS_LEN
    }

    pub fn wire_bits(&self) -> u64 {
        self.wire_len() as u64 * 8
    }

    /// Zero-pads the payload so the frame reaches the 64-byte minimum.
    pub fn pad_to_minimum(&mut self) {
        let len = self.wire_len();
        if len < MIN_FRAME_LEN {
            self.payload.resize(self.payload.len() + MIN_FRAME_LEN - len, 0);
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.dst.0);
        out.extend_from_slice(&self.src.0);
        for tag in &self.tags {
            out.extend_from_slice(&tag.tpid.to_be_bytes());
            out.extend_from_slice(&tag.tci().to_be_bytes());
        }
        out.extend_from_slice(&self.ethertype.to_be_bytes());
        out.extend_from_slice(&self.payload);
        // FCS goes out least significant byte first, as on a real wire.
        let fcs = crc32fast::hash(&out);
        out.extend_from_slice(&fcs.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN + FCS_LEN {
            return Err(FrameError::Truncated(bytes.len()));
        }
        let (body, fcs) = bytes.split_at(bytes.len() - FCS_LEN);
        let found = u32::from_le_bytes([fcs[0], fcs[1], fcs[2], fcs[3]]);
        let expected = crc32fast::hash(body);
        if found != expected {
            return Err(FrameError::Checksum { expected, found });
        }

        let mut dst = [0u8; 6];
        let mut src = [0u8; 6];
        dst.copy_from_slice(&body[0..6]);
        src.copy_from_slice(&body[6..12]);

        let mut tags = Vec::new();
        let mut at = 12;
        loop {
            if body.len() < at + 2 {
                return Err(FrameError::Truncated(bytes.len()));
            }
            let code = u16::from_be_bytes([body[at], body[at + 1]]);
            if code != TPID_CTAG && code != TPID_STAG {
                break;
            }
            if body.len() < at + TAG_LEN + 2 {
                return Err(FrameError::Truncated(bytes.len()));
            }
            let tci = u16::from_be_bytes([body[at + 2], body[at + 3]]);
            tags.push(VlanTag::from_tci(code, tci)?);
            at += TAG_LEN;
        }
        check_discipline(&tags)?;

        let ethertype = u16::from_be_bytes([body[at], body[at + 1]]);
        Ok(EthernetFrame {
            dst: MacAddress(dst),
            src: MacAddress(src),
            tags,
            ethertype,
            payload: body[at + 2..].to_vec(),
        })
    }
}

fn check_discipline(tags: &[VlanTag]) -> Result<(), FrameError> {
    let last = tags.len().saturating_sub(1);
    for (depth, tag) in tags.iter().enumerate() {
        let want = if depth == last { TPID_CTAG } else { TPID_STAG };
        if tag.tpid != want {
            return Err(FrameError::TpidDiscipline { depth });
        }
    }
    Ok(())
}

/// True when the stack obeys the S-over-C layering rule.
pub fn tpid_discipline_holds(tags: &[VlanTag]) -> bool {
    check_discipline(tags).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EthernetFrame {
        EthernetFrame::new(MacAddress::BROADCAST, MacAddress([0, 0, 0, 0, 0, 1]), 0x88B5, vec![0xde, 0xad, 0xbe, 0xef])
    }

    #[test]
    fn push_on_untagged_is_ctag() {
        let mut f = sample();
        f.push_tag(10, 0, false).unwrap();
        assert_eq!(f.tags(), &[VlanTag::ctag(Vid::new(10).unwrap())]);
    }

    #[test]
    fn push_on_tagged_is_stag() {
        let mut f = sample();
        f.push_tag(10, 0, false).unwrap();
        f.push_tag(100, 0, false).unwrap();
        assert_eq!(f.tags()[0], VlanTag::stag(Vid::new(100).unwrap()));
        assert_eq!(f.tags()[1], VlanTag::ctag(Vid::new(10).unwrap()));
        assert_eq!(f.outer_vid().map(Vid::get), Some(100));
    }

    #[test]
    fn reserved_vid_rejected() {
        let mut f = sample();
        assert_eq!(f.push_tag(4095, 0, false), Err(FrameError::VidRange(4095)));
        assert_eq!(f.depth(), 0);
    }

    #[test]
    fn pop_returns_outer_and_keeps_ctag() {
        let mut f = sample();
        f.push_tag(10, 0, false).unwrap();
        f.push_tag(100, 0, false).unwrap();
        let top = f.pop_tag().unwrap();
        assert_eq!(top.vid.get(), 100);
        assert_eq!(f.tags(), &[VlanTag::ctag(Vid::new(10).unwrap())]);
        assert_eq!(f.pop_tag().unwrap().tpid, TPID_CTAG);
        assert_eq!(f.pop_tag(), Err(FrameError::Underflow));
    }

    #[test]
    fn outer_vid_cases() {
        let mut f = sample();
        assert_eq!(f.outer_vid(), None);
        f.push_tag(7, 0, false).unwrap();
        assert_eq!(f.outer_vid().map(Vid::get), Some(7));
    }

    #[test]
    fn tci_bit_layout() {
        let tag = VlanTag { tpid: TPID_CTAG, pcp: 5, dei: true, vid: Vid::new(10).unwrap() };
        assert_eq!(tag.tci(), 0xB00A);
    }

    #[test]
    fn tci_matches_bruteforce_packing() {
        // Independent oracle: place each field bit by bit.
        for pcp in 0u8..8 {
            for dei in [false, true] {
                for vid in 0u16..=MAX_VID {
                    let mut oracle = 0u16;
                    for bit in 0..12 {
                        if vid >> bit & 1 == 1 {
                            oracle |= 1 << bit;
                        }
                    }
                    if dei {
                        oracle |= 1 << 12;
                    }
                    for bit in 0..3 {
                        if pcp >> bit & 1 == 1 {
                            oracle |= 1 << (13 + bit);
                        }
                    }
                    let tag = VlanTag { tpid: TPID_CTAG, pcp, dei, vid: Vid(vid) };
                    assert_eq!(tag.tci(), oracle);
                    let back = VlanTag::from_tci(TPID_CTAG, oracle).unwrap();
                    assert_eq!(back, tag);
                }
            }
        }
    }

    #[test]
    fn serialize_single_ctag_bytes() {
        // Frozen from an independent struct/zlib packing of the same frame.
        let mut f = sample();
        f.push_tag(10, 0, false).unwrap();
        let bytes = f.serialize();
        let hex: String = bytes.iter().map(|b| format!("{b:02X}")).collect();
        assert_eq!(hex, "FFFFFFFFFFFF0000000000018100000A88B5DEADBEEF36901C6D");
        assert_eq!(bytes.len(), 18 + 4 + 4);
    }

    #[test]
    fn serialize_stacked_bytes() {
        let mut f = EthernetFrame::new(
            MacAddress([0, 0x11, 0x22, 0x33, 0x44, 0x55]),
            MacAddress([0x02, 0, 0, 0, 0, 0x0b]),
            0x0800,
            (0u8..8).collect(),
        );
        f.push_tag(10, 5, true).unwrap();
        f.push_tag(100, 0, false).unwrap();
        let hex: String = f.serialize().iter().map(|b| format!("{b:02X}")).collect();
        assert_eq!(hex, "00112233445502000000000B88A800648100B00A08000001020304050607F905BDD4");
    }

    #[test]
    fn parse_short_is_truncated() {
        assert_eq!(EthernetFrame::parse(&[0u8; 10]), Err(FrameError::Truncated(10)));
    }

    #[test]
    fn parse_flipped_fcs_is_checksum_error() {
        let mut f = sample();
        f.push_tag(10, 0, false).unwrap();
        let mut bytes = f.serialize();
        *bytes.last_mut().unwrap() ^= 0x01;
        assert!(matches!(EthernetFrame::parse(&bytes), Err(FrameError::Checksum { .. })));
    }

    #[test]
    fn parse_rejects_ctag_outside_innermost() {
        // Two C-TAGs: the outer one must have been an S-TAG.
        let mut body = vec![0xffu8; 12];
        body.extend_from_slice(&[0x81, 0x00, 0x00, 0x64, 0x81, 0x00, 0x00, 0x0a, 0x08, 0x00]);
        let fcs = crc32fast::hash(&body);
        body.extend_from_slice(&fcs.to_le_bytes());
        assert_eq!(EthernetFrame::parse(&body), Err(FrameError::TpidDiscipline { depth: 0 }));
    }

    #[test]
    fn lone_stag_rejected() {
        let mut body = vec![0xffu8; 12];
        body.extend_from_slice(&[0x88, 0xa8, 0x00, 0x64, 0x08, 0x00]);
        let fcs = crc32fast::hash(&body);
        body.extend_from_slice(&fcs.to_le_bytes());
        assert_eq!(EthernetFrame::parse(&body), Err(FrameError::TpidDiscipline { depth: 0 }));
    }

    #[test]
    fn padding_reaches_minimum() {
        let mut f = sample();
        f.pad_to_minimum();
        assert_eq!(f.wire_len(), MIN_FRAME_LEN);
        assert_eq!(f.serialize().len(), MIN_FRAME_LEN);
    }

    #[test]
    fn mac_classes() {
        assert!(MacAddress::BROADCAST.is_broadcast());
        assert!(MacAddress::BROADCAST.is_multicast());
        assert!(MacAddress([0x01, 0, 0x5e, 0, 0, 1]).is_multicast());
        assert!(!MacAddress::local(11).is_multicast());
    }
}
