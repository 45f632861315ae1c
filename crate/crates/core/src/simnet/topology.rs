//! Topology documents and their validated in-memory form.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Address, Subnet24};
use crate::censor::{CensorError, CensorRule, Health, HealthChange, RuleId};
use crate::flow::FlowField;
use crate::simnet::ecmp::{EcmpPolicy, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Router,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    pub asn: u32,
    pub subnet24: Subnet24,
    pub geo: String,
    /// Whether the node answers expired packets with ICMP time-exceeded.
    pub responsive: bool,
    /// Interface address; derived from `subnet24` and the id when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<Ipv4Address>,
}

impl Node {
    pub fn address(&self) -> Ipv4Address {
        self.addr.unwrap_or_else(|| self.subnet24.host((self.id.0 % 254 + 1) as u8))
    }

    pub fn is_router(&self) -> bool {
        self.role == Role::Router
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{context} references node {node}, which does not exist")]
    DanglingNodeRef { context: String, node: NodeId },
    #[error("policy of node {0} has no next hops")]
    EmptyNextHops(NodeId),
    #[error("probability {p} for node {node} is outside [0, 1]")]
    LossOutOfRange { node: NodeId, p: f64 },
    #[error(transparent)]
    Censor(#[from] CensorError),
    #[error("reading topology: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for TopologyError {
    fn from(e: serde_json::Error) -> Self {
        TopologyError::Schema(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub node: NodeId,
    /// Restricts the entry to flows toward this endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    pub selector: Selector,
    pub next_hops: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDoc {
    pub node: NodeId,
    pub p: f64,
}

/// On-disk topology document (JSON). Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub nodes: Vec<Node>,
    pub policies: Vec<PolicyDoc>,
    #[serde(default)]
    pub censors: Vec<CensorRule>,
    #[serde(default)]
    pub loss: Vec<RateDoc>,
    /// Per-node probability of answering an expired packet; defaults to 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub icmp_rate: Vec<RateDoc>,
    pub seed: u64,
    /// First-hop router of the vantage point; defaults to the lowest router id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct PolicyTable {
    default: Option<EcmpPolicy>,
    per_dst: BTreeMap<NodeId, EcmpPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
struct PolicyFlip {
    node: NodeId,
    dst: Option<NodeId>,
    from_epoch: u64,
    policy: EcmpPolicy,
}

/// A validated, immutable-while-running network.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, Node>,
    policies: BTreeMap<NodeId, PolicyTable>,
    censors: Vec<CensorRule>,
    censors_at: BTreeMap<NodeId, Vec<usize>>,
    loss: BTreeMap<NodeId, f64>,
    icmp_rate: BTreeMap<NodeId, f64>,
    seed: u64,
    entry: NodeId,
    by_addr: HashMap<Ipv4Address, NodeId>,
    flips: Vec<PolicyFlip>,
    health_log: Vec<HealthChange>,
}

fn check_rate(node: NodeId, p: f64) -> Result<(), TopologyError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(TopologyError::LossOutOfRange { node, p })
    }
}

pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(document)?;
    Topology::from_doc(doc)
}

impl Topology {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        load_topology(&std::fs::read_to_string(path)?)
    }

    pub fn from_doc(doc: TopologyDoc) -> Result<Self, TopologyError> {
        let schema = |msg: String| Err(TopologyError::Schema(msg));

        let mut nodes = BTreeMap::new();
        let mut by_addr = HashMap::new();
        for node in doc.nodes {
            if node.asn == 0 {
                return schema(format!("node {} has asn 0", node.id));
            }
            let addr = node.address();
            if !node.subnet24.contains(addr) {
                return schema(format!("node {} address {addr} is outside {}", node.id, node.subnet24));
            }
            if let Some(other) = by_addr.insert(addr, node.id) {
                return schema(format!("nodes {other} and {} share address {addr}", node.id));
            }
            if let Some(dup) = nodes.insert(node.id, node) {
                return schema(format!("duplicate node id {}", dup.id));
            }
        }
        if nodes.is_empty() {
            return schema("topology has no nodes".into());
        }
        let exists = |context: &str, id: NodeId| -> Result<&Node, TopologyError> {
            nodes.get(&id).ok_or_else(|| TopologyError::DanglingNodeRef { context: context.to_string(), node: id })
        };

        let mut policies: BTreeMap<NodeId, PolicyTable> = BTreeMap::new();
        for p in doc.policies {
            let context = format!("policy of node {}", p.node);
            if !exists("policy", p.node)?.is_router() {
                return schema(format!("endpoint {} cannot carry an ECMP policy", p.node));
            }
            if let Some(dst) = p.dst {
                if exists(&context, dst)?.is_router() {
                    return schema(format!("{context}: dst {dst} is not an endpoint"));
                }
            }
            let policy = EcmpPolicy::new(p.selector, p.next_hops);
            validate_policy(p.node, &policy, |id| exists(&context, id).map(|_| ()))?;
            let table = policies.entry(p.node).or_default();
            let slot = match p.dst {
                None => &mut table.default,
                Some(dst) => {
                    if table.per_dst.contains_key(&dst) {
                        return schema(format!("{context}: duplicate entry for dst {dst}"));
                    }
                    table.per_dst.insert(dst, policy);
                    continue;
                }
            };
            if slot.is_some() {
                return schema(format!("{context}: duplicate default entry"));
            }
            *slot = Some(policy);
        }
        for node in nodes.values().filter(|n| n.is_router()) {
            if !policies.contains_key(&node.id) {
                return schema(format!("router {} has no ECMP policy", node.id));
            }
        }

        let mut censors_at: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut censors = doc.censors;
        for (i, rule) in censors.iter_mut().enumerate() {
            exists("censor", rule.attach_at)?;
            rule.validate()?;
            rule.id = RuleId(i);
            censors_at.entry(rule.attach_at).or_default().push(i);
        }

        let mut loss = BTreeMap::new();
        for r in doc.loss {
            exists("loss", r.node)?;
            check_rate(r.node, r.p)?;
            loss.insert(r.node, r.p);
        }
        let mut icmp_rate = BTreeMap::new();
        for r in doc.icmp_rate {
            exists("icmp_rate", r.node)?;
            check_rate(r.node, r.p)?;
            icmp_rate.insert(r.node, r.p);
        }

        let entry = match doc.entry {
            Some(id) => {
                if !exists("entry", id)?.is_router() {
                    return schema(format!("entry {id} is not a router"));
                }
                id
            }
            None => match nodes.values().find(|n| n.is_router()) {
                Some(n) => n.id,
                None => return schema("topology has no routers".into()),
            },
        };

        Ok(Self {
            nodes,
            policies,
            censors,
            censors_at,
            loss,
            icmp_rate,
            seed: doc.seed,
            entry,
            by_addr,
            flips: Vec::new(),
            health_log: Vec::new(),
        })
    }

    /// Back to the document form. Scheduled changes are not part of it.
    pub fn to_doc(&self) -> TopologyDoc {
        let mut policies = Vec::new();
        for (node, table) in &self.policies {
            if let Some(p) = &table.default {
                policies.push(PolicyDoc {
                    node: *node,
                    dst: None,
                    selector: p.selector.clone(),
                    next_hops: p.next_hops.clone(),
                });
            }
            for (dst, p) in &table.per_dst {
                policies.push(PolicyDoc {
                    node: *node,
                    dst: Some(*dst),
                    selector: p.selector.clone(),
                    next_hops: p.next_hops.clone(),
                });
            }
        }
        let rates = |m: &BTreeMap<NodeId, f64>| m.iter().map(|(&node, &p)| RateDoc { node, p }).collect::<Vec<_>>();
        TopologyDoc {
            nodes: self.nodes.values().cloned().collect(),
            policies,
            censors: self.censors.iter().map(|r| CensorRule { schedule: Default::default(), ..r.clone() }).collect(),
            loss: rates(&self.loss),
            icmp_rate: rates(&self.icmp_rate),
            seed: self.seed,
            entry: Some(self.entry),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("topology serializes")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self) -> NodeId {
        self.entry
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_by_addr(&self, addr: Ipv4Address) -> Option<&Node> {
        self.by_addr.get(&addr).and_then(|id| self.nodes.get(id))
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.role == Role::Endpoint)
    }

    /// Number of policy entries, counting per-destination entries separately.
    pub fn policy_count(&self) -> usize {
        self.policies.values().map(|t| t.default.is_some() as usize + t.per_dst.len()).sum()
    }

    /// The policy `node` applies to flows toward `dst` at `epoch`.
    pub fn policy_for(&self, node: NodeId, dst: Option<NodeId>, epoch: u64) -> Option<&EcmpPolicy> {
        let flipped = self
            .flips
            .iter()
            .filter(|f| f.node == node && f.from_epoch <= epoch && (f.dst.is_none() || f.dst == dst))
            // per-destination flips beat default ones; later epochs beat earlier
            .max_by_key(|f| (f.dst.is_some(), f.from_epoch));
        if let Some(f) = flipped {
            return Some(&f.policy);
        }
        let table = self.policies.get(&node)?;
        dst.and_then(|d| table.per_dst.get(&d)).or(table.default.as_ref())
    }

    pub fn loss(&self, node: NodeId) -> f64 {
        self.loss.get(&node).copied().unwrap_or(0.0)
    }

    pub fn icmp_rate(&self, node: NodeId) -> f64 {
        self.icmp_rate.get(&node).copied().unwrap_or(1.0)
    }

    pub fn censors(&self) -> &[CensorRule] {
        &self.censors
    }

    pub fn censors_at(&self, node: NodeId) -> impl Iterator<Item = &CensorRule> {
        self.censors_at.get(&node).into_iter().flatten().map(|&i| &self.censors[i])
    }

    /// Nodes hosting at least one censor rule.
    pub fn censor_nodes(&self) -> BTreeSet<NodeId> {
        self.censors.iter().map(|r| r.attach_at).collect()
    }

    /// Schedules a health change effective from `epoch`. Call between epochs only.
    pub fn set_health(&mut self, rule: RuleId, health: Health, epoch: u64) -> Result<&CensorRule, CensorError> {
        let slot = self.censors.get_mut(rule.0).ok_or(CensorError::UnknownRule(rule.0))?;
        *slot = slot.with_health(health, epoch);
        self.health_log.push(HealthChange { rule, health, epoch });
        Ok(&self.censors[rule.0])
    }

    pub fn health_log(&self) -> &[HealthChange] {
        &self.health_log
    }

    /// Replaces the policy of `node` (optionally only toward `dst`) from
    /// `from_epoch` on. Scenario hook for route changes between epochs.
    pub fn flip_policy(
        &mut self,
        node: NodeId,
        dst: Option<NodeId>,
        from_epoch: u64,
        policy: EcmpPolicy,
    ) -> Result<(), TopologyError> {
        match self.nodes.get(&node) {
            Some(n) if n.is_router() => {}
            Some(_) => return Err(TopologyError::Schema(format!("endpoint {node} cannot carry a policy"))),
            None => return Err(TopologyError::DanglingNodeRef { context: "policy flip".into(), node }),
        }
        let nodes = &self.nodes;
        validate_policy(node, &policy, |id| {
            nodes
                .contains_key(&id)
                .then_some(())
                .ok_or(TopologyError::DanglingNodeRef { context: "policy flip".into(), node: id })
        })?;
        self.flips.push(PolicyFlip { node, dst, from_epoch, policy });
        Ok(())
    }
}

fn validate_policy(
    node: NodeId,
    policy: &EcmpPolicy,
    exists: impl Fn(NodeId) -> Result<(), TopologyError>,
) -> Result<(), TopologyError> {
    if policy.next_hops.is_empty() {
        return Err(TopologyError::EmptyNextHops(node));
    }
    for &hop in &policy.next_hops {
        exists(hop)?;
    }
    match &policy.selector {
        Selector::LowBits { field, n_bits } => {
            if !(1..=8).contains(n_bits) {
                return Err(TopologyError::Schema(format!("node {node}: n_bits {n_bits} outside 1..=8")));
            }
            if *field == FlowField::Protocol {
                return Err(TopologyError::Schema(format!("node {node}: low_bits cannot select protocol")));
            }
        }
        Selector::HashTuple { fields } => {
            if fields.is_empty() {
                return Err(TopologyError::Schema(format!("node {node}: hash_tuple needs at least one field")));
            }
            let unique: BTreeSet<_> = fields.iter().collect();
            if unique.len() != fields.len() {
                return Err(TopologyError::Schema(format!("node {node}: duplicate hash_tuple field")));
            }
        }
    }
    Ok(())
}
