use serde::{Deserialize, Serialize};

use crate::flow::{fnv1a64, FlowField, FlowId};
use crate::simnet::NodeId;

/// How a router turns a flow into a next-hop index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selector {
    /// The lowest `n_bits` of one header field.
    LowBits { field: FlowField, n_bits: u8 },
    /// FNV-1a-64 over the canonical bytes of the chosen fields.
    HashTuple { fields: Vec<FlowField> },
}

impl Selector {
    /// The raw selector value before reduction modulo the next-hop count.
    pub fn value(&self, flow: &FlowId) -> u64 {
        match self {
            Selector::LowBits { field, n_bits } => (flow.field_value(*field) & ((1u32 << n_bits) - 1)) as u64,
            Selector::HashTuple { fields } => {
                let bytes = flow.to_bytes();
                let mut spans: Vec<_> = fields.iter().map(|f| f.span()).collect();
                spans.sort_by_key(|s| s.start);
                let input: Vec<u8> = spans.into_iter().flat_map(|s| bytes[s].iter().copied()).collect();
                fnv1a64(&input)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcmpPolicy {
    pub selector: Selector,
    pub next_hops: Vec<NodeId>,
}

impl EcmpPolicy {
    pub fn new(selector: Selector, next_hops: Vec<NodeId>) -> Self {
        Self { selector, next_hops }
    }

    pub fn index(&self, flow: &FlowId) -> usize {
        (self.selector.value(flow) % self.next_hops.len() as u64) as usize
    }
}

/// Next hop for `flow`. Depends on nothing but the flow's 5-tuple.
pub fn next_hop(policy: &EcmpPolicy, flow: &FlowId) -> NodeId {
    policy.next_hops[policy.index(flow)]
}
