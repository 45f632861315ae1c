//! Censoring middleboxes attached to topology nodes.
//!
//! A rule fires only on sensitive payload packets of its protocol whose
//! domain matches, and only while its health is `Active`. Health can be
//! scheduled to change at a future epoch, which is how intermittent and
//! failed devices are scripted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::flow::{AppProtocol, FlowId};
use crate::packet::{Packet, PacketKind, Sensitivity};
use crate::simnet::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CensorError {
    #[error("unknown censor rule #{0}")]
    UnknownRule(usize),
    #[error("action {action} is not valid for protocol {protocol}")]
    InvalidAction { action: &'static str, protocol: AppProtocol },
}

/// Index of a rule in its topology's censor list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TowardDestination,
    Bidirectional,
}

/// `blocked.example` matches exactly; `*.blocked.example` matches the
/// domain itself and every subdomain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainPattern {
    Exact(String),
    Suffix(String),
}

impl DomainPattern {
    pub fn matches(&self, domain: &str) -> bool {
        let domain = domain.trim_end_matches('.');
        match self {
            DomainPattern::Exact(d) => domain.eq_ignore_ascii_case(d),
            DomainPattern::Suffix(s) => {
                if domain.eq_ignore_ascii_case(s) {
                    return true;
                }
                let (dl, sl) = (domain.len(), s.len());
                dl > sl + 1 && domain.as_bytes()[dl - sl - 1] == b'.' && domain[dl - sl..].eq_ignore_ascii_case(s)
            }
        }
    }
}

impl fmt::Display for DomainPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainPattern::Exact(d) => f.write_str(d),
            DomainPattern::Suffix(s) => write!(f, "*.{s}"),
        }
    }
}

impl FromStr for DomainPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_end_matches('.');
        if let Some(rest) = s.strip_prefix("*.") {
            if rest.is_empty() {
                return Err("empty suffix pattern".into());
            }
            Ok(DomainPattern::Suffix(rest.to_string()))
        } else if s.is_empty() || s.contains('*') {
            Err(format!("invalid domain pattern `{s}`"))
        } else {
            Ok(DomainPattern::Exact(s.to_string()))
        }
    }
}

impl Serialize for DomainPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CensorAction {
    InjectDnsAnswer { tag: String },
    InjectRst,
    DropSilently,
    InjectBlockpage { tag: String },
}

impl CensorAction {
    pub fn name(&self) -> &'static str {
        match self {
            CensorAction::InjectDnsAnswer { .. } => "inject_dns_answer",
            CensorAction::InjectRst => "inject_rst",
            CensorAction::DropSilently => "drop_silently",
            CensorAction::InjectBlockpage { .. } => "inject_blockpage",
        }
    }

    pub fn valid_for(&self, protocol: AppProtocol) -> bool {
        match self {
            CensorAction::InjectDnsAnswer { .. } => protocol == AppProtocol::Dns,
            CensorAction::InjectBlockpage { .. } => protocol == AppProtocol::Http,
            CensorAction::InjectRst | CensorAction::DropSilently => {
                matches!(protocol, AppProtocol::Http | AppProtocol::Https)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Active,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensorRule {
    #[serde(skip)]
    pub id: RuleId,
    pub attach_at: NodeId,
    pub protocol: AppProtocol,
    pub direction: Direction,
    pub domain_pattern: DomainPattern,
    pub action: CensorAction,
    pub health: Health,
    #[serde(default)]
    pub residual_epochs: u64,
    /// Health changes keyed by the epoch they take effect at.
    #[serde(skip)]
    pub schedule: BTreeMap<u64, Health>,
}

impl CensorRule {
    pub fn new(attach_at: NodeId, protocol: AppProtocol, domain_pattern: DomainPattern, action: CensorAction) -> Self {
        Self {
            id: RuleId(0),
            attach_at,
            protocol,
            direction: Direction::TowardDestination,
            domain_pattern,
            action,
            health: Health::Active,
            residual_epochs: 0,
            schedule: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CensorError> {
        if self.action.valid_for(self.protocol) {
            Ok(())
        } else {
            Err(CensorError::InvalidAction { action: self.action.name(), protocol: self.protocol })
        }
    }

    pub fn health_at(&self, epoch: u64) -> Health {
        self.schedule.range(..=epoch).next_back().map(|(_, h)| *h).unwrap_or(self.health)
    }

    /// The same rule with `health` taking effect from `epoch` on.
    pub fn with_health(&self, health: Health, epoch: u64) -> CensorRule {
        let mut rule = self.clone();
        rule.schedule.retain(|&e, _| e < epoch);
        rule.schedule.insert(epoch, health);
        rule
    }

    /// Whether the rule acts on `packet` on its own merits, ignoring any
    /// residual window a previous trigger opened.
    pub fn matches(&self, packet: &Packet, epoch: u64) -> bool {
        self.health_at(epoch) == Health::Active
            && packet.kind.is_payload()
            && packet.sensitivity == Sensitivity::Sensitive
            && AppProtocol::of_flow(&packet.flow) == Some(self.protocol)
            && self.domain_pattern.matches(&packet.body_tag)
    }

    pub fn apply(&self, packet: &Packet, epoch: u64) -> Option<CensorEvent> {
        self.matches(packet, epoch).then(|| CensorEvent::new(self, packet, epoch, false))
    }
}

/// Ground-truth record of one censor action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensorEvent {
    pub rule: RuleId,
    pub at: NodeId,
    pub action: CensorAction,
    pub epoch: u64,
    pub flow: FlowId,
    /// Fired inside a residual window rather than on a matching packet.
    pub residual: bool,
}

impl CensorEvent {
    pub fn new(rule: &CensorRule, packet: &Packet, epoch: u64, residual: bool) -> Self {
        Self { rule: rule.id, at: rule.attach_at, action: rule.action.clone(), epoch, flow: packet.flow, residual }
    }

    /// The packet the censor sends back toward the source, if any.
    pub fn response_to(&self, trigger: &Packet) -> Option<Packet> {
        match &self.action {
            CensorAction::InjectDnsAnswer { tag } => {
                Some(Packet::reply_to(trigger, PacketKind::DnsResponse, tag.clone()))
            }
            CensorAction::InjectRst => Some(Packet::reply_to(trigger, PacketKind::TcpRst, "")),
            CensorAction::InjectBlockpage { tag } => {
                Some(Packet::reply_to(trigger, PacketKind::HttpResponse, tag.clone()))
            }
            CensorAction::DropSilently => None,
        }
    }
}

/// Ground-truth record of a health change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthChange {
    pub rule: RuleId,
    pub health: Health,
    pub epoch: u64,
}
