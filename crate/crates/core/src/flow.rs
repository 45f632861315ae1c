//! Flow identifiers and their canonical byte form.
//!
//! Routers pin a flow to one ECMP next hop by looking at (some of) these
//! thirteen bytes, so the layout is fixed:
//!
//! ```text
//! src_ip(4) | dst_ip(4) | src_port(2, BE) | dst_port(2, BE) | protocol(1)
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::addr::{Ipv4Address, SourceParams};

pub const FLOW_BYTES: usize = 13;

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| (hash ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    /// IANA protocol number.
    pub const fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }
}

/// Application protocols a probe can speak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppProtocol {
    Dns,
    Http,
    Https,
}

impl AppProtocol {
    pub const ALL: [AppProtocol; 3] = [AppProtocol::Dns, AppProtocol::Http, AppProtocol::Https];

    pub const fn port(self) -> u16 {
        match self {
            AppProtocol::Dns => 53,
            AppProtocol::Http => 80,
            AppProtocol::Https => 443,
        }
    }

    pub const fn transport(self) -> Protocol {
        match self {
            AppProtocol::Dns => Protocol::Udp,
            AppProtocol::Http | AppProtocol::Https => Protocol::Tcp,
        }
    }

    /// Recognizes the application protocol from the well-known destination port.
    pub fn of_flow(flow: &FlowId) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.transport() == flow.protocol && p.port() == flow.dst_port)
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            AppProtocol::Dns => "dns",
            AppProtocol::Http => "http",
            AppProtocol::Https => "https",
        }
    }
}

impl fmt::Display for AppProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AppProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dns" => Ok(AppProtocol::Dns),
            "http" => Ok(AppProtocol::Http),
            "https" => Ok(AppProtocol::Https),
            other => Err(format!("unknown protocol `{other}` (expected dns, http or https)")),
        }
    }
}

/// Header fields a router may feed into its next-hop decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowField {
    SrcIp,
    DstIp,
    SrcPort,
    DstPort,
    Protocol,
}

impl FlowField {
    /// Byte range of the field inside the canonical serialization.
    pub const fn span(self) -> std::ops::Range<usize> {
        match self {
            FlowField::SrcIp => 0..4,
            FlowField::DstIp => 4..8,
            FlowField::SrcPort => 8..10,
            FlowField::DstPort => 10..12,
            FlowField::Protocol => 12..13,
        }
    }
}

/// The 5-tuple routers hash for ECMP next-hop selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId {
    pub src_ip: Ipv4Address,
    pub dst_ip: Ipv4Address,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
}

impl FlowId {
    pub fn new(source: SourceParams, dst_ip: Ipv4Address, dst_port: u16, protocol: Protocol) -> Self {
        Self { src_ip: source.src_ip, dst_ip, src_port: source.src_port, dst_port, protocol }
    }

    pub fn source(&self) -> SourceParams {
        SourceParams::new(self.src_ip, self.src_port)
    }

    /// The same flow seen from the other end.
    pub fn reversed(&self) -> Self {
        Self {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }

    pub fn to_bytes(&self) -> [u8; FLOW_BYTES] {
        let mut out = [0u8; FLOW_BYTES];
        out[0..4].copy_from_slice(&self.src_ip.0.to_be_bytes());
        out[4..8].copy_from_slice(&self.dst_ip.0.to_be_bytes());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out[12] = self.protocol.number();
        out
    }

    /// Numeric value of a single header field.
    pub fn field_value(&self, field: FlowField) -> u32 {
        match field {
            FlowField::SrcIp => self.src_ip.0,
            FlowField::DstIp => self.dst_ip.0,
            FlowField::SrcPort => self.src_port as u32,
            FlowField::DstPort => self.dst_port as u32,
            FlowField::Protocol => self.protocol.number() as u32,
        }
    }
}

/// Canonical 13-byte serialization of a flow; the ECMP hashing input.
pub fn serialize_flow(flow: &FlowId) -> [u8; FLOW_BYTES] {
    flow.to_bytes()
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.protocol {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        };
        write!(f, "{}:{} -> {}:{} {proto}", self.src_ip, self.src_port, self.dst_ip, self.dst_port)
    }
}
