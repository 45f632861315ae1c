//! Route-stable protocol probes and the conservative verdict classifier.
//!
//! Every packet of one [`ProbeSpec`] carries the same 5-tuple, so all of them
//! follow one ECMP path. A cell is only called censored or clear when every
//! repetition agrees; anything inconsistent is excluded.

pub mod matrix;
pub mod transport;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Address, SourceParams};
use crate::flow::{AppProtocol, FlowId};
use crate::packet::{Packet, PacketKind, Sensitivity};
use crate::verdict::{Mechanism, Verdict};

pub use matrix::{probe_cell, verdict_matrix, CellOutcome, DomainPair, ProbeConfig, VerdictMatrix};
pub use transport::{
    session_key, Exchange, LiveBackend, LiveSession, SessionSource, SimBackend, SimSession, Transport, TransportError,
};

/// First ip_id of ordinary probe traffic; tracer copies use 1..=64.
const PROBE_IP_ID_BASE: u16 = 0x1000;
const PROBE_TTL: u8 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("invalid probe: {0}")]
    InvalidSpec(String),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Transmission attempts the sending host's stack makes within one epoch
/// before giving up. The payload budget is the Linux kernel's
/// (`tcp_retries2 = 15`). The handshake gets the same budget rather than the
/// kernel's 7 SYNs: a handshake carries no domain, so a lost one says
/// nothing about censorship and must not be likelier than a lost payload.
/// A DNS query is sent once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retries {
    pub syn_attempts: u32,
    pub data_attempts: u32,
    pub dns_attempts: u32,
}

impl Default for Retries {
    fn default() -> Self {
        Self { syn_attempts: 16, data_attempts: 16, dns_attempts: 1 }
    }
}

impl Retries {
    /// Stock Linux: `tcp_syn_retries = 6`, `tcp_retries2 = 15`.
    pub const KERNEL: Retries = Retries { syn_attempts: 7, data_attempts: 16, dns_attempts: 1 };

    /// One attempt of everything, as a raw-packet tool without a kernel
    /// stack would send.
    pub const SINGLE: Retries = Retries { syn_attempts: 1, data_attempts: 1, dns_attempts: 1 };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub protocol: AppProtocol,
    pub destination: Ipv4Address,
    pub domain: String,
    pub sensitivity: Sensitivity,
    pub source: SourceParams,
    pub repetitions: u32,
    pub epoch_interval: u64,
    pub retries: Retries,
}

impl ProbeSpec {
    pub fn new(
        protocol: AppProtocol,
        destination: Ipv4Address,
        domain: impl Into<String>,
        sensitivity: Sensitivity,
        source: SourceParams,
    ) -> Self {
        Self {
            protocol,
            destination,
            domain: domain.into(),
            sensitivity,
            source,
            repetitions: 3,
            epoch_interval: 1,
            retries: Retries::default(),
        }
    }

    pub fn with_repetitions(mut self, repetitions: u32) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn dst_port(&self) -> u16 {
        self.protocol.port()
    }

    /// The one Flow-ID every packet of this probe carries.
    pub fn flow(&self) -> FlowId {
        FlowId::new(self.source, self.destination, self.dst_port(), self.protocol.transport())
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.repetitions == 0 {
            return Err(ProbeError::InvalidSpec("repetitions must be positive".into()));
        }
        if self.epoch_interval == 0 {
            return Err(ProbeError::InvalidSpec("epoch_interval must be positive".into()));
        }
        if self.sensitivity == Sensitivity::NotApplicable {
            return Err(ProbeError::InvalidSpec("a probe is either control or sensitive".into()));
        }
        let r = self.retries;
        if r.syn_attempts == 0 || r.data_attempts == 0 || r.dns_attempts == 0 {
            return Err(ProbeError::InvalidSpec("every retry budget needs at least one attempt".into()));
        }
        Ok(())
    }

    fn packet(&self, kind: PacketKind, ttl: u8, ip_id: u16) -> Packet {
        let p = Packet::new(self.flow(), kind, ttl, ip_id);
        if kind.is_payload() {
            p.with_payload(self.sensitivity, self.domain.clone())
        } else {
            p
        }
    }

    /// The application payload at a chosen TTL and ip_id.
    pub fn payload_packet(&self, ttl: u8, ip_id: u16) -> Packet {
        let kind = match self.protocol {
            AppProtocol::Dns => PacketKind::UdpPayload,
            AppProtocol::Http | AppProtocol::Https => PacketKind::TcpPayload,
        };
        self.packet(kind, ttl, ip_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "tag", rename_all = "snake_case")]
pub enum Outcome {
    PayloadResponse(String),
    RstReceived,
    DnsResponse(String),
    NoResponse,
    HandshakeFailed,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::PayloadResponse(_) => "payload_response",
            Outcome::RstReceived => "rst_received",
            Outcome::DnsResponse(_) => "dns_response",
            Outcome::NoResponse => "no_response",
            Outcome::HandshakeFailed => "handshake_failed",
        }
    }

    pub fn tag(&self) -> Option<&str> {
        match self {
            Outcome::PayloadResponse(t) | Outcome::DnsResponse(t) => Some(t),
            _ => None,
        }
    }

    /// Inverse of [`Outcome::name`] plus [`Outcome::tag`].
    pub fn from_parts(name: &str, tag: Option<String>) -> Option<Self> {
        Some(match name {
            "payload_response" => Outcome::PayloadResponse(tag?),
            "rst_received" => Outcome::RstReceived,
            "dns_response" => Outcome::DnsResponse(tag?),
            "no_response" => Outcome::NoResponse,
            "handshake_failed" => Outcome::HandshakeFailed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub epoch: u64,
    #[serde(flatten)]
    pub outcome: Outcome,
}

fn next_ip_id<T: Transport + ?Sized>(transport: &T) -> u16 {
    PROBE_IP_ID_BASE + (transport.sent().len() % 0xE000) as u16
}

/// Handshake result for a TCP probe's flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handshake {
    Established,
    Reset,
    Failed,
}

/// Runs the 3-way handshake, retransmitting the SYN per `spec.retries`.
pub fn handshake<T: Transport + ?Sized>(spec: &ProbeSpec, transport: &mut T) -> Result<Handshake, ProbeError> {
    for _ in 0..spec.retries.syn_attempts {
        let syn = spec.packet(PacketKind::TcpSyn, PROBE_TTL, next_ip_id(transport));
        let x = transport.exchange(&syn)?;
        if x.reply(PacketKind::TcpRst).is_some() {
            return Ok(Handshake::Reset);
        }
        if x.reply(PacketKind::TcpSynAck).is_some() {
            let ack = spec.packet(PacketKind::TcpAck, PROBE_TTL, next_ip_id(transport));
            transport.exchange(&ack)?;
            return Ok(Handshake::Established);
        }
    }
    Ok(Handshake::Failed)
}

/// One measurement in the transport's current epoch.
pub fn run_once<T: Transport + ?Sized>(spec: &ProbeSpec, transport: &mut T) -> Result<Observation, ProbeError> {
    spec.validate()?;
    let epoch = transport.epoch();
    let observe = |outcome| Ok(Observation { epoch, outcome });

    let attempts = match spec.protocol {
        AppProtocol::Dns => spec.retries.dns_attempts,
        AppProtocol::Http | AppProtocol::Https => {
            match handshake(spec, transport)? {
                Handshake::Established => {}
                Handshake::Reset => return observe(Outcome::RstReceived),
                Handshake::Failed => return observe(Outcome::HandshakeFailed),
            }
            spec.retries.data_attempts
        }
    };
    for _ in 0..attempts {
        let x = transport.exchange(&spec.payload_packet(PROBE_TTL, next_ip_id(transport)))?;
        if x.reply(PacketKind::TcpRst).is_some() {
            return observe(Outcome::RstReceived);
        }
        if let Some(r) = x.reply(PacketKind::HttpResponse) {
            return observe(Outcome::PayloadResponse(r.body_tag.clone()));
        }
        if let Some(r) = x.reply(PacketKind::DnsResponse) {
            return observe(Outcome::DnsResponse(r.body_tag.clone()));
        }
    }
    observe(Outcome::NoResponse)
}

/// `spec.repetitions` measurements, advancing the epoch before each.
pub fn run_probe<T: Transport + ?Sized>(spec: &ProbeSpec, transport: &mut T) -> Result<Vec<Observation>, ProbeError> {
    spec.validate()?;
    (0..spec.repetitions)
        .map(|_| {
            transport.advance(spec.epoch_interval);
            run_once(spec, transport)
        })
        .collect()
}

/// Control and sensitive probes interleaved: both run in each epoch,
/// control first unless `sensitive_first`.
pub fn run_paired<T: Transport + ?Sized>(
    control: &ProbeSpec,
    sensitive: &ProbeSpec,
    sensitive_first: bool,
    transport: &mut T,
) -> Result<(Vec<Observation>, Vec<Observation>), ProbeError> {
    control.validate()?;
    sensitive.validate()?;
    if control.repetitions != sensitive.repetitions {
        return Err(ProbeError::InvalidSpec("paired probes need equal repetitions".into()));
    }
    let (mut c, mut s) = (Vec::new(), Vec::new());
    for _ in 0..control.repetitions {
        transport.advance(control.epoch_interval);
        if sensitive_first {
            s.push(run_once(sensitive, transport)?);
            c.push(run_once(control, transport)?);
        } else {
            c.push(run_once(control, transport)?);
            s.push(run_once(sensitive, transport)?);
        }
    }
    Ok((c, s))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("cannot read blockpage registry: {0}")]
    Io(String),
    #[error("malformed blockpage registry: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryEntry {
    template_id: String,
    label: String,
}

/// Known blockpage templates. Matching is exact on the template id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockpageRegistry {
    templates: BTreeMap<String, String>,
}

impl BlockpageRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template_id: impl Into<String>, label: impl Into<String>) {
        self.templates.insert(template_id.into(), label.into());
    }

    pub fn with(mut self, template_id: impl Into<String>, label: impl Into<String>) -> Self {
        self.insert(template_id, label);
        self
    }

    pub fn contains(&self, template_id: &str) -> bool {
        self.templates.contains_key(template_id)
    }

    pub fn label(&self, template_id: &str) -> Option<&str> {
        self.templates.get(template_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Parses a JSON list of `{"template_id", "label"}` objects.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let entries: Vec<RegistryEntry> =
            serde_json::from_str(text).map_err(|e| RegistryError::Schema(e.to_string()))?;
        let mut reg = Self::new();
        for e in entries {
            reg.insert(e.template_id, e.label);
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    fn matches(&self, obs: &Observation) -> bool {
        matches!(&obs.outcome, Outcome::PayloadResponse(tag) if self.contains(tag))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("classification needs equal, non-empty observation lists (control {control}, sensitive {sensitive})")]
pub struct LengthMismatch {
    pub control: usize,
    pub sensitive: usize,
}

/// Verdict for one cell. Censorship is reported only when every sensitive
/// repetition shows it and the controls rule out network noise; the first
/// matching mechanism wins in the order DNS injection, blockpage, RST,
/// drop. A cell is clear only when every sensitive repetition is clean.
pub fn classify(
    control: &[Observation],
    sensitive: &[Observation],
    protocol: AppProtocol,
    registry: &BlockpageRegistry,
) -> Result<Verdict, LengthMismatch> {
    if control.len() != sensitive.len() || control.is_empty() {
        return Err(LengthMismatch { control: control.len(), sensitive: sensitive.len() });
    }
    let all = |obs: &[Observation], p: &dyn Fn(&Outcome) -> bool| obs.iter().all(|o| p(&o.outcome));
    let none = |obs: &[Observation], p: &dyn Fn(&Outcome) -> bool| !obs.iter().any(|o| p(&o.outcome));
    let is_rst = |o: &Outcome| *o == Outcome::RstReceived;
    let is_payload = |o: &Outcome| matches!(o, Outcome::PayloadResponse(_));
    let is_silent = |o: &Outcome| matches!(o, Outcome::NoResponse | Outcome::HandshakeFailed);
    let is_blockpage = |o: &Outcome| matches!(o, Outcome::PayloadResponse(t) if registry.contains(t));

    let tcp = protocol != AppProtocol::Dns;
    let verdict = if !tcp
        && all(sensitive, &|o| matches!(o, Outcome::DnsResponse(_)))
        && all(control, &|o| *o == Outcome::NoResponse)
    {
        Verdict::Censored(Mechanism::DnsInjection)
    } else if tcp && sensitive.iter().all(|o| registry.matches(o)) && !control.iter().any(|o| registry.matches(o)) {
        Verdict::Censored(Mechanism::Blockpage)
    } else if tcp && all(sensitive, &is_rst) && none(control, &is_rst) {
        Verdict::Censored(Mechanism::RstInjection)
    } else if tcp && all(sensitive, &is_silent) && all(control, &is_payload) {
        Verdict::Censored(Mechanism::PacketDrop)
    } else if if tcp {
        all(sensitive, &|o| is_payload(o) && !is_blockpage(o))
    } else {
        all(sensitive, &|o| *o == Outcome::NoResponse)
    } {
        Verdict::NotCensored
    } else {
        Verdict::Excluded
    };
    Ok(verdict)
}
