//! Brute-force route oracle: walks ECMP decisions with no TTL, loss or
//! censors in the way. Tracer output is checked against it.

use std::collections::BTreeMap;

use crate::addr::SourceParams;
use crate::flow::{FlowId, Protocol};
use crate::simnet::ecmp::next_hop;
use crate::simnet::forward::{ForwardError, MAX_HOPS};
use crate::simnet::{NodeId, Role, Topology};

/// Full route of `flow` from the entry router, ending at an endpoint, or at
/// the router that has no route for it.
pub fn oracle_path(topology: &Topology, flow: &FlowId, epoch: u64) -> Result<Vec<NodeId>, ForwardError> {
    let dst = topology.node_by_addr(flow.dst_ip).filter(|n| n.role == Role::Endpoint).map(|n| n.id);
    let mut path = vec![topology.entry()];
    loop {
        let at = *path.last().expect("non-empty");
        let node = topology.node(at).ok_or(ForwardError::UnknownNode(at))?;
        if node.role == Role::Endpoint {
            return Ok(path);
        }
        let Some(policy) = topology.policy_for(at, dst, epoch) else {
            return Ok(path);
        };
        if path.len() == MAX_HOPS {
            return Err(ForwardError::LoopGuardExceeded(at));
        }
        path.push(next_hop(policy, flow));
    }
}

pub fn oracle_paths(
    topology: &Topology,
    dst: NodeId,
    space: &[SourceParams],
    protocol: Protocol,
    dst_port: u16,
) -> Result<BTreeMap<SourceParams, Vec<NodeId>>, ForwardError> {
    let dst_ip = topology.node(dst).ok_or(ForwardError::UnknownNode(dst))?.address();
    space
        .iter()
        .map(|&src| {
            let flow = FlowId::new(src, dst_ip, dst_port, protocol);
            oracle_path(topology, &flow, 0).map(|p| (src, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::Ipv4Address;
    use crate::simnet::load_topology;
    use std::collections::BTreeSet;

    const SPLIT: &str = r#"{
        "nodes": [
            {"id": 1, "role": "router", "asn": 100, "subnet24": "10.0.1.0/24", "geo": "A", "responsive": true},
            {"id": 2, "role": "router", "asn": 100, "subnet24": "10.0.2.0/24", "geo": "A", "responsive": true},
            {"id": 3, "role": "router", "asn": 100, "subnet24": "10.0.3.0/24", "geo": "A", "responsive": true},
            {"id": 4, "role": "endpoint", "asn": 200, "subnet24": "203.0.113.0/24", "geo": "B", "responsive": true, "addr": "203.0.113.4"}
        ],
        "policies": [
            {"node": 1, "selector": {"kind": "low_bits", "field": "src_port", "n_bits": 1}, "next_hops": [2, 3]},
            {"node": 2, "selector": {"kind": "hash_tuple", "fields": ["src_ip"]}, "next_hops": [4]},
            {"node": 3, "selector": {"kind": "hash_tuple", "fields": ["src_ip"]}, "next_hops": [4]}
        ],
        "seed": 1
    }"#;

    fn space() -> Vec<SourceParams> {
        (40000..40010).map(|p| SourceParams::new(Ipv4Address::new(198, 51, 100, 7), p)).collect()
    }

    #[test]
    fn parity_split_gives_two_paths() {
        let t = load_topology(SPLIT).unwrap();
        let paths = oracle_paths(&t, NodeId(4), &space(), Protocol::Tcp, 80).unwrap();
        let distinct: BTreeSet<_> = paths.values().cloned().collect();
        assert_eq!(distinct.len(), 2);
        for (src, path) in &paths {
            let mid = if src.src_port % 2 == 0 { 2 } else { 3 };
            assert_eq!(path, &vec![NodeId(1), NodeId(mid), NodeId(4)]);
        }
    }

    #[test]
    fn no_fan_out_means_one_path() {
        let doc = SPLIT.replace("\"next_hops\": [2, 3]", "\"next_hops\": [2]");
        let t = load_topology(&doc).unwrap();
        let paths = oracle_paths(&t, NodeId(4), &space(), Protocol::Tcp, 80).unwrap();
        let distinct: BTreeSet<_> = paths.values().cloned().collect();
        assert_eq!(distinct.len(), 1);
    }

    #[test]
    fn loops_are_reported() {
        let doc = SPLIT.replace("\"next_hops\": [4]}", "\"next_hops\": [1]}");
        let t = load_topology(&doc).unwrap();
        assert!(matches!(
            oracle_paths(&t, NodeId(4), &space(), Protocol::Tcp, 80),
            Err(ForwardError::LoopGuardExceeded(_))
        ));
    }
}
