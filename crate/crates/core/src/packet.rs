use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::SourceParams;
use crate::flow::FlowId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    TcpSyn,
    TcpSynAck,
    TcpAck,
    TcpPayload,
    TcpRst,
    UdpPayload,
    IcmpTtlExceeded,
    DnsResponse,
    HttpResponse,
}

impl PacketKind {
    /// Packets that carry the application payload a censor inspects.
    pub fn is_payload(self) -> bool {
        matches!(self, PacketKind::TcpPayload | PacketKind::UdpPayload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Control,
    Sensitive,
    NotApplicable,
}

/// The part of the offending packet an ICMP error carries back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quote {
    pub source: SourceParams,
    pub ip_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub flow: FlowId,
    pub ttl: u8,
    pub ip_id: u16,
    pub kind: PacketKind,
    pub sensitivity: Sensitivity,
    /// Probe payloads carry the queried domain (DNS qname, Host header, SNI);
    /// responses carry a blockpage template id or DNS answer label.
    pub body_tag: String,
    pub quoted: Option<Quote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("ICMP replies travel the reverse path and have no probe flow")]
    IcmpPacket,
}

impl Packet {
    pub fn new(flow: FlowId, kind: PacketKind, ttl: u8, ip_id: u16) -> Self {
        debug_assert!(kind != PacketKind::IcmpTtlExceeded, "use Packet::icmp_ttl_exceeded");
        Self { flow, ttl, ip_id, kind, sensitivity: Sensitivity::NotApplicable, body_tag: String::new(), quoted: None }
    }

    pub fn with_payload(mut self, sensitivity: Sensitivity, body_tag: impl Into<String>) -> Self {
        self.sensitivity = sensitivity;
        self.body_tag = body_tag.into();
        self
    }

    /// A time-exceeded error, which always quotes the expired packet.
    pub fn icmp_ttl_exceeded(flow: FlowId, quote: Quote) -> Self {
        Self {
            flow,
            ttl: 64,
            ip_id: 0,
            kind: PacketKind::IcmpTtlExceeded,
            sensitivity: Sensitivity::NotApplicable,
            body_tag: String::new(),
            quoted: Some(quote),
        }
    }

    /// A response travelling back toward the probe's source.
    pub fn reply_to(trigger: &Packet, kind: PacketKind, body_tag: impl Into<String>) -> Self {
        Self {
            flow: trigger.flow.reversed(),
            ttl: 64,
            ip_id: 0,
            kind,
            sensitivity: Sensitivity::NotApplicable,
            body_tag: body_tag.into(),
            quoted: None,
        }
    }
}

pub fn flow_id_of(packet: &Packet) -> Result<FlowId, PacketError> {
    match packet.kind {
        PacketKind::IcmpTtlExceeded => Err(PacketError::IcmpPacket),
        _ => Ok(packet.flow),
    }
}
