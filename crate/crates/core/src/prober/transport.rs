//! Packet transports the prober and tracer run over.
//!
//! A transport moves one packet toward its destination and hands back
//! whatever comes back within the current epoch. The simulated backend
//! routes through a [`Topology`]; the live backend is a stub that refuses
//! to touch real networks.

use thiserror::Error;

use crate::addr::Ipv4Address;
use crate::censor::CensorEvent;
use crate::flow::{fnv1a64, FlowId};
use crate::packet::{Packet, PacketKind};
use crate::simnet::{forward, ForwardError, ForwardState, NodeId, Topology, TransitOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("live transport is not available: this tool only probes simulated networks")]
    Unavailable,
    #[error(transparent)]
    Network(#[from] ForwardError),
}

/// What one sent packet produced before the epoch's timeout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exchange {
    pub replies: Vec<Packet>,
    /// The packet reached its destination host.
    pub delivered: bool,
}

impl Exchange {
    pub fn reply(&self, kind: PacketKind) -> Option<&Packet> {
        self.replies.iter().find(|p| p.kind == kind)
    }
}

pub trait Transport {
    fn epoch(&self) -> u64;

    fn advance(&mut self, ticks: u64);

    fn exchange(&mut self, packet: &Packet) -> Result<Exchange, TransportError>;

    /// Every packet handed to [`Transport::exchange`], in order.
    fn sent(&self) -> &[Packet];

    /// Maps a replying address to a topology node, when the transport knows one.
    fn resolve(&self, _addr: Ipv4Address) -> Option<NodeId> {
        None
    }

    /// Censor actions the transport witnessed first-hand since the last call.
    fn take_ground_truth(&mut self) -> Vec<CensorEvent> {
        Vec::new()
    }
}

/// Opens one independent session per measurement cell.
pub trait SessionSource: Sync {
    type Session: Transport;

    fn open(&self, key: u64) -> Self::Session;
}

/// Stream key for a session, derived from the flow it measures so that
/// the same cell sees the same randomness in every run.
pub fn session_key(flow: &FlowId, purpose: &str, sample: u64) -> u64 {
    let mut bytes = flow.to_bytes().to_vec();
    bytes.extend_from_slice(purpose.as_bytes());
    bytes.extend_from_slice(&sample.to_be_bytes());
    fnv1a64(&bytes)
}

#[derive(Debug, Clone, Copy)]
pub struct SimBackend<'a> {
    topology: &'a Topology,
}

impl<'a> SimBackend<'a> {
    pub fn new(topology: &'a Topology) -> Self {
        Self { topology }
    }

    pub fn topology(&self) -> &'a Topology {
        self.topology
    }
}

impl<'a> SessionSource for SimBackend<'a> {
    type Session = SimSession<'a>;

    fn open(&self, key: u64) -> SimSession<'a> {
        SimSession::new(self.topology, key)
    }
}

/// One simulated vantage-point session. Return paths are lossless; only the
/// forward direction crosses loss, TTL expiry and censors.
#[derive(Debug, Clone)]
pub struct SimSession<'a> {
    topology: &'a Topology,
    state: ForwardState,
    epoch: u64,
    sent: Vec<Packet>,
    reported: usize,
}

impl<'a> SimSession<'a> {
    pub fn new(topology: &'a Topology, key: u64) -> Self {
        Self { topology, state: ForwardState::for_topology(topology, key), epoch: 0, sent: Vec::new(), reported: 0 }
    }

    /// All censor events of the session, including ones already taken.
    pub fn events(&self) -> &[CensorEvent] {
        &self.state.events
    }
}

/// How a simulated host answers a packet that reached it. Hosts run web
/// servers but no DNS resolver.
fn endpoint_reply(packet: &Packet) -> Option<Packet> {
    match packet.kind {
        PacketKind::TcpSyn => Some(Packet::reply_to(packet, PacketKind::TcpSynAck, "")),
        PacketKind::TcpPayload => {
            Some(Packet::reply_to(packet, PacketKind::HttpResponse, format!("origin:{}", packet.body_tag)))
        }
        _ => None,
    }
}

impl Transport for SimSession<'_> {
    fn epoch(&self) -> u64 {
        self.epoch
    }

    fn advance(&mut self, ticks: u64) {
        self.epoch += ticks;
    }

    fn exchange(&mut self, packet: &Packet) -> Result<Exchange, TransportError> {
        self.sent.push(packet.clone());
        let transit = forward(self.topology, packet, self.topology.entry(), self.epoch, &mut self.state)?;
        let mut replies = transit.replies;
        let delivered = matches!(transit.outcome, TransitOutcome::Delivered { .. });
        if delivered {
            replies.extend(endpoint_reply(packet));
        }
        Ok(Exchange { replies, delivered })
    }

    fn sent(&self) -> &[Packet] {
        &self.sent
    }

    fn resolve(&self, addr: Ipv4Address) -> Option<NodeId> {
        self.topology.node_by_addr(addr).map(|n| n.id)
    }

    fn take_ground_truth(&mut self) -> Vec<CensorEvent> {
        let fresh = self.state.events[self.reported..].to_vec();
        self.reported = self.state.events.len();
        fresh
    }
}

/// Placeholder for a raw-socket adapter. Probing real censored networks
/// puts people inside them at risk, so every exchange fails; a privileged
/// adapter would implement [`Transport`] out of tree.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiveBackend;

#[derive(Debug, Clone, Default)]
pub struct LiveSession {
    epoch: u64,
}

impl SessionSource for LiveBackend {
    type Session = LiveSession;

    fn open(&self, _key: u64) -> LiveSession {
        LiveSession::default()
    }
}

impl Transport for LiveSession {
    fn epoch(&self) -> u64 {
        self.epoch
    }

    fn advance(&mut self, ticks: u64) {
        self.epoch += ticks;
    }

    fn exchange(&mut self, _packet: &Packet) -> Result<Exchange, TransportError> {
        Err(TransportError::Unavailable)
    }

    fn sent(&self) -> &[Packet] {
        &[]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::SourceParams;
    use crate::flow::Protocol;
    use crate::simnet::load_topology;

    const CHAIN: &str = r#"{
        "nodes": [
            {"id": 1, "role": "router", "asn": 100, "subnet24": "10.0.1.0/24", "geo": "A", "responsive": true},
            {"id": 2, "role": "endpoint", "asn": 200, "subnet24": "203.0.113.0/24", "geo": "B", "responsive": true, "addr": "203.0.113.2"}
        ],
        "policies": [
            {"node": 1, "selector": {"kind": "hash_tuple", "fields": ["src_ip"]}, "next_hops": [2]}
        ],
        "seed": 5
    }"#;

    fn flow(port: u16, protocol: Protocol) -> FlowId {
        FlowId::new(
            SourceParams::new(Ipv4Address::new(198, 51, 100, 9), 40000),
            Ipv4Address::new(203, 0, 113, 2),
            port,
            protocol,
        )
    }

    #[test]
    fn endpoint_answers_syn_and_payload_but_not_dns() {
        let t = load_topology(CHAIN).unwrap();
        let mut s = SimBackend::new(&t).open(1);
        let syn = Packet::new(flow(80, Protocol::Tcp), PacketKind::TcpSyn, 64, 0x1000);
        let x = s.exchange(&syn).unwrap();
        assert!(x.delivered);
        assert!(x.reply(PacketKind::TcpSynAck).is_some());

        let get = Packet::new(flow(80, Protocol::Tcp), PacketKind::TcpPayload, 64, 0x1001)
            .with_payload(crate::packet::Sensitivity::Control, "example.com");
        let x = s.exchange(&get).unwrap();
        assert_eq!(x.reply(PacketKind::HttpResponse).unwrap().body_tag, "origin:example.com");

        let query = Packet::new(flow(53, Protocol::Udp), PacketKind::UdpPayload, 64, 0x1002);
        let x = s.exchange(&query).unwrap();
        assert!(x.delivered && x.replies.is_empty());
        assert_eq!(s.sent().len(), 3);
    }

    #[test]
    fn live_backend_always_refuses() {
        let mut s = LiveBackend.open(0);
        let syn = Packet::new(flow(80, Protocol::Tcp), PacketKind::TcpSyn, 64, 0);
        assert_eq!(s.exchange(&syn), Err(TransportError::Unavailable));
    }

    #[test]
    fn session_keys_separate_purposes_and_samples() {
        let f = flow(80, Protocol::Tcp);
        assert_ne!(session_key(&f, "cell", 0), session_key(&f, "trace", 0));
        assert_ne!(session_key(&f, "trace", 0), session_key(&f, "trace", 1));
        assert_eq!(session_key(&f, "cell", 3), session_key(&f, "cell", 3));
    }
}
