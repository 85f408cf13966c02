//! Frame traces: one-line-per-frame hex dumps and classic pcap files.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rx,
    Tx,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Rx => "RX",
            Direction::Tx => "TX",
        }
    }
}

/// `<time_ns> <node> <port> <RX|TX> <HEX>`
pub fn hex_line(time: SimTime, node: &str, port: usize, dir: Direction, bytes: &[u8]) -> String {
    let mut line = String::with_capacity(32 + node.len() + bytes.len() * 2);
    let _ = write!(line, "{} {} {} {} ", time.as_nanos(), node, port, dir.as_str());
    for b in bytes {
        let _ = write!(line, "{b:02X}");
    }
    line
}

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
pub const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65_535;

/// Microsecond-resolution pcap writer, little-endian.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        let mut hdr = [0u8; 24];
        hdr[0..4].copy_from_slice(&PCAP_MAGIC.to_le_bytes());
        hdr[4..6].copy_from_slice(&2u16.to_le_bytes());
        hdr[6..8].copy_from_slice(&4u16.to_le_bytes());
        // thiszone, sigfigs stay zero
        hdr[16..20].copy_from_slice(&SNAPLEN.to_le_bytes());
        hdr[20..24].copy_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        out.write_all(&hdr)?;
        Ok(PcapWriter { out })
    }

    pub fn write_frame(&mut self, time: SimTime, bytes: &[u8]) -> io::Result<()> {
        let ns = time.as_nanos();
        let secs = (ns / 1_000_000_000) as u32;
        let usecs = ((ns % 1_000_000_000) / 1_000) as u32;
        let len = bytes.len() as u32;
        let mut rec = [0u8; 16];
        rec[0..4].copy_from_slice(&secs.to_le_bytes());
        rec[4..8].copy_from_slice(&usecs.to_le_bytes());
        rec[8..12].copy_from_slice(&len.min(SNAPLEN).to_le_bytes());
        rec[12..16].copy_from_slice(&len.to_le_bytes());
        self.out.write_all(&rec)?;
        self.out.write_all(&bytes[..bytes.len().min(SNAPLEN as usize)])
    }

    pub fn get_ref(&self) -> &W {
        &self.out
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
