//! Hop-by-hop forwarding.
//!
//! At every node, in order: the hop is recorded, per-node loss is drawn,
//! endpoints accept the packet, routers decrement the TTL (expiring packets
//! never reach the node's censors), attached censors are consulted, and the
//! ECMP policy picks the next hop.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::censor::{CensorEvent, Health, RuleId};
use crate::flow::FlowId;
use crate::packet::{Packet, Quote};
use crate::simnet::ecmp::next_hop;
use crate::simnet::{NodeId, Role, Topology};

/// More hops than this means the topology loops.
pub const MAX_HOPS: usize = 64;

/// ChaCha words reserved per packet; two draws of two words per hop.
const WORDS_PER_PACKET: u128 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForwardError {
    #[error("packet exceeded {MAX_HOPS} hops; the topology has a forwarding loop through node {0}")]
    LoopGuardExceeded(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("packets need ttl >= 1")]
    ZeroTtl,
}

/// Counter-mode random stream: packet `n` of a stream always sees the same
/// draws, however many draws earlier packets consumed.
#[derive(Debug, Clone)]
pub struct PacketStream {
    rng: ChaCha8Rng,
    serial: u64,
}

impl PacketStream {
    pub fn new(seed: u64, key: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key);
        Self { rng, serial: 0 }
    }

    pub fn serial(&self) -> u64 {
        self.serial
    }

    fn next_packet(&mut self) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(self.serial as u128 * WORDS_PER_PACKET);
        self.serial += 1;
        &mut self.rng
    }
}

/// Per-session mutable state: the random stream, open residual-censorship
/// windows and the ground-truth log of censor events.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub stream: PacketStream,
    residual: HashMap<(RuleId, FlowId), u64>,
    pub events: Vec<CensorEvent>,
}

impl ForwardState {
    pub fn new(seed: u64, key: u64) -> Self {
        Self { stream: PacketStream::new(seed, key), residual: HashMap::new(), events: Vec::new() }
    }

    pub fn for_topology(topology: &Topology, key: u64) -> Self {
        Self::new(topology.seed(), key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransitOutcome {
    Delivered { at: NodeId },
    TtlExceeded { at: NodeId, responsive: bool },
    Lost { at: NodeId },
    CensorAction(CensorEvent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitResult {
    pub outcome: TransitOutcome,
    pub hops: Vec<NodeId>,
    /// Packets the network sends back toward the source: ICMP errors and
    /// censor-injected responses. Endpoint replies are the transport's job.
    pub replies: Vec<Packet>,
}

impl TransitResult {
    pub fn delivered(&self) -> bool {
        matches!(self.outcome, TransitOutcome::Delivered { .. })
    }
}

pub fn forward(
    topology: &Topology,
    packet: &Packet,
    entry: NodeId,
    epoch: u64,
    state: &mut ForwardState,
) -> Result<TransitResult, ForwardError> {
    if packet.ttl == 0 {
        return Err(ForwardError::ZeroTtl);
    }
    let dst = topology.node_by_addr(packet.flow.dst_ip).filter(|n| n.role == Role::Endpoint).map(|n| n.id);
    let rng = state.stream.next_packet();
    let mut ttl = packet.ttl;
    let mut at = entry;
    let mut hops = Vec::new();

    let done = |outcome, hops, replies| Ok(TransitResult { outcome, hops, replies });

    loop {
        if hops.len() == MAX_HOPS {
            return Err(ForwardError::LoopGuardExceeded(at));
        }
        let node = topology.node(at).ok_or(ForwardError::UnknownNode(at))?;
        hops.push(at);
        let loss_draw: f64 = rng.random();
        let icmp_draw: f64 = rng.random();

        if loss_draw < topology.loss(at) {
            return done(TransitOutcome::Lost { at }, hops, vec![]);
        }
        if node.role == Role::Endpoint {
            return done(TransitOutcome::Delivered { at }, hops, vec![]);
        }

        ttl -= 1;
        if ttl == 0 {
            let responsive = node.responsive && icmp_draw < topology.icmp_rate(at);
            let mut replies = Vec::new();
            if responsive {
                let mut icmp_flow = packet.flow.reversed();
                icmp_flow.src_ip = node.address();
                replies.push(Packet::icmp_ttl_exceeded(
                    icmp_flow,
                    Quote { source: packet.flow.source(), ip_id: packet.ip_id },
                ));
            }
            return done(TransitOutcome::TtlExceeded { at, responsive }, hops, replies);
        }

        for rule in topology.censors_at(at) {
            let key = (rule.id, packet.flow);
            let event = match rule.apply(packet, epoch) {
                Some(ev) => Some(ev),
                None => {
                    let in_window = state.residual.get(&key).is_some_and(|&until| epoch <= until);
                    (in_window && packet.kind.is_payload() && rule.health_at(epoch) == Health::Active)
                        .then(|| CensorEvent::new(rule, packet, epoch, true))
                }
            };
            if let Some(event) = event {
                if rule.residual_epochs > 0 && !event.residual {
                    state.residual.insert(key, epoch + rule.residual_epochs);
                }
                let replies = event.response_to(packet).into_iter().collect();
                state.events.push(event.clone());
                return done(TransitOutcome::CensorAction(event), hops, replies);
            }
        }

        match topology.policy_for(at, dst, epoch) {
            Some(policy) => at = next_hop(policy, &packet.flow),
            None => return done(TransitOutcome::Lost { at }, hops, vec![]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::{Ipv4Address, SourceParams};
    use crate::flow::{FlowField, Protocol};
    use crate::packet::{PacketKind, Sensitivity};
    use crate::simnet::load_topology;

    // r1 -> r2 -> e3, with r1 responsive and r2 silent
    const CHAIN: &str = r#"{
        "nodes": [
            {"id": 1, "role": "router", "asn": 100, "subnet24": "10.0.1.0/24", "geo": "A", "responsive": true},
            {"id": 2, "role": "router", "asn": 100, "subnet24": "10.0.2.0/24", "geo": "A", "responsive": false},
            {"id": 3, "role": "endpoint", "asn": 200, "subnet24": "203.0.113.0/24", "geo": "B", "responsive": true, "addr": "203.0.113.3"}
        ],
        "policies": [
            {"node": 1, "selector": {"kind": "hash_tuple", "fields": ["src_ip", "src_port"]}, "next_hops": [2]},
            {"node": 2, "selector": {"kind": "low_bits", "field": "src_port", "n_bits": 1}, "next_hops": [3]}
        ],
        "censors": [],
        "loss": [],
        "seed": 11
    }"#;

    fn packet(ttl: u8) -> Packet {
        let flow = FlowId::new(
            SourceParams::new(Ipv4Address::new(198, 51, 100, 4), 40000),
            Ipv4Address::new(203, 0, 113, 3),
            80,
            Protocol::Tcp,
        );
        Packet::new(flow, PacketKind::TcpPayload, ttl, ttl as u16).with_payload(Sensitivity::Sensitive, "blocked.test")
    }

    #[test]
    fn ttl_one_expires_at_first_router() {
        let t = load_topology(CHAIN).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let r = forward(&t, &packet(1), NodeId(1), 0, &mut st).unwrap();
        assert_eq!(r.outcome, TransitOutcome::TtlExceeded { at: NodeId(1), responsive: true });
        assert_eq!(r.replies.len(), 1);
        let icmp = &r.replies[0];
        assert_eq!(icmp.kind, PacketKind::IcmpTtlExceeded);
        assert_eq!(icmp.flow.src_ip, t.node(NodeId(1)).unwrap().address());
        assert_eq!(icmp.quoted, Some(Quote { source: packet(1).flow.source(), ip_id: 1 }));
    }

    #[test]
    fn silent_router_consumes_ttl_without_icmp() {
        let t = load_topology(CHAIN).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let r = forward(&t, &packet(2), NodeId(1), 0, &mut st).unwrap();
        assert_eq!(r.outcome, TransitOutcome::TtlExceeded { at: NodeId(2), responsive: false });
        assert!(r.replies.is_empty());
    }

    #[test]
    fn delivered_over_three_hops() {
        let t = load_topology(CHAIN).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let r = forward(&t, &packet(64), NodeId(1), 0, &mut st).unwrap();
        assert_eq!(r.outcome, TransitOutcome::Delivered { at: NodeId(3) });
        assert_eq!(r.hops, vec![NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn deterministic_for_same_seed_and_serial() {
        let doc = CHAIN.replace("\"loss\": []", "\"loss\": [{\"node\": 2, \"p\": 0.5}]");
        let t = load_topology(&doc).unwrap();
        let run = || {
            let mut st = ForwardState::for_topology(&t, 9);
            (0..50).map(|_| forward(&t, &packet(64), NodeId(1), 0, &mut st).unwrap()).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let lost = a.iter().filter(|r| matches!(r.outcome, TransitOutcome::Lost { .. })).count();
        assert!(lost > 5 && lost < 45, "loss draws look broken: {lost}/50");
    }

    #[test]
    fn loop_guard() {
        let doc = CHAIN.replace("\"next_hops\": [3]", "\"next_hops\": [1]");
        let t = load_topology(&doc).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let err = forward(&t, &packet(255), NodeId(1), 0, &mut st).unwrap_err();
        assert!(matches!(err, ForwardError::LoopGuardExceeded(_)));
    }

    #[test]
    fn censor_fires_and_residual_window_catches_control() {
        let doc = CHAIN.replace(
            "\"censors\": []",
            r#""censors": [{"attach_at": 2, "protocol": "http", "direction": "toward_destination", "domain_pattern": "blocked.test", "action": {"kind": "inject_rst"}, "health": "active", "residual_epochs": 1}]"#,
        );
        let t = load_topology(&doc).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let r = forward(&t, &packet(64), NodeId(1), 5, &mut st).unwrap();
        assert!(matches!(r.outcome, TransitOutcome::CensorAction(_)));
        assert_eq!(r.replies[0].kind, PacketKind::TcpRst);
        assert_eq!(r.hops, vec![NodeId(1), NodeId(2)]);

        let mut control = packet(64);
        control.sensitivity = Sensitivity::Control;
        control.body_tag = "example.com".into();
        let r = forward(&t, &control, NodeId(1), 6, &mut st).unwrap();
        match r.outcome {
            TransitOutcome::CensorAction(ev) => assert!(ev.residual),
            other => panic!("expected residual action, got {other:?}"),
        }
        let r = forward(&t, &control, NodeId(1), 7, &mut st).unwrap();
        assert!(r.delivered());
        assert_eq!(st.events.len(), 2);
    }

    #[test]
    fn expiring_packet_is_not_seen_by_censor() {
        let doc = CHAIN.replace(
            "\"censors\": []",
            r#""censors": [{"attach_at": 2, "protocol": "http", "direction": "toward_destination", "domain_pattern": "blocked.test", "action": {"kind": "inject_rst"}, "health": "active", "residual_epochs": 0}]"#,
        );
        let t = load_topology(&doc).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let r = forward(&t, &packet(2), NodeId(1), 0, &mut st).unwrap();
        assert!(matches!(r.outcome, TransitOutcome::TtlExceeded { .. }));
        assert!(st.events.is_empty());
    }

    #[test]
    fn policy_flip_between_epochs() {
        use crate::simnet::ecmp::{EcmpPolicy, Selector};
        let doc = CHAIN.replace("\"next_hops\": [2]", "\"next_hops\": [2, 3]");
        let mut t = load_topology(&doc).unwrap();
        let mut st = ForwardState::for_topology(&t, 0);
        let before = forward(&t, &packet(64), NodeId(1), 0, &mut st).unwrap().hops;
        let pinned = EcmpPolicy::new(Selector::LowBits { field: FlowField::SrcIp, n_bits: 1 }, vec![NodeId(3)]);
        t.flip_policy(NodeId(1), None, 3, pinned).unwrap();
        assert_eq!(forward(&t, &packet(64), NodeId(1), 2, &mut st).unwrap().hops, before);
        assert_eq!(forward(&t, &packet(64), NodeId(1), 3, &mut st).unwrap().hops, vec![NodeId(1), NodeId(3)]);
    }
}
