//! Mid-flow traceroute of one specific payload packet.
//!
//! After the handshake, the payload is re-sent once per TTL with the TTL
//! written into the IP ID, so each ICMP time-exceeded quote names the rung
//! of the ladder it answers. No copy is ever retransmitted and every copy
//! carries the probe's Flow-ID, so the ladder maps that flow's ECMP path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Address, SourceParams};
use crate::analysis::{PathGroup, PathSet};
use crate::flow::AppProtocol;
use crate::packet::PacketKind;
use crate::prober::{handshake, Handshake, ProbeError, ProbeSpec, Transport};
use crate::simnet::{NodeId, MAX_HOPS};

pub const DEFAULT_MAX_TTL: u8 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("max_ttl must be between 1 and {MAX_HOPS}, got {0}")]
    InvalidMaxTtl(u8),
    #[error("TCP handshake with {0} failed")]
    HandshakeFailed(SourceParams),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

impl From<crate::prober::TransportError> for TraceError {
    fn from(e: crate::prober::TransportError) -> Self {
        TraceError::Probe(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    ReachedDestination,
    /// An injected RST ended the session; carries the index into `hops` of
    /// the last hop that answered before it.
    CensoredAt(Option<usize>),
    Exhausted,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::ReachedDestination => f.write_str("reached"),
            Terminal::CensoredAt(Some(i)) => write!(f, "censored_at:{i}"),
            Terminal::CensoredAt(None) => f.write_str("censored_at:unknown"),
            Terminal::Exhausted => f.write_str("exhausted"),
        }
    }
}

impl FromStr for Terminal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reached" => Ok(Terminal::ReachedDestination),
            "exhausted" => Ok(Terminal::Exhausted),
            "censored_at:unknown" => Ok(Terminal::CensoredAt(None)),
            _ => s
                .strip_prefix("censored_at:")
                .and_then(|i| i.parse().ok())
                .map(|i| Terminal::CensoredAt(Some(i)))
                .ok_or_else(|| format!("unknown trace terminal `{s}`")),
        }
    }
}

impl Serialize for Terminal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Terminal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Something a censor sent back while the ladder was running.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensorSignal {
    pub ttl: u8,
    pub kind: PacketKind,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePath {
    pub dst: Ipv4Address,
    pub source: SourceParams,
    pub protocol: AppProtocol,
    /// `hops[i]` answered for TTL `i + 1`; `None` is a silent rung. The
    /// destination itself is not listed.
    pub hops: Vec<Option<NodeId>>,
    pub terminal: Terminal,
    pub signals: Vec<CensorSignal>,
}

impl TracePath {
    pub fn present(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.hops.iter().flatten().copied()
    }

    /// TTL at which each present hop answered.
    pub fn hop_ttls(&self) -> impl Iterator<Item = (u8, NodeId)> + '_ {
        self.hops.iter().enumerate().filter_map(|(i, h)| h.map(|n| (i as u8 + 1, n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOptions {
    pub max_ttl: u8,
    /// End the ladder at the first copy the destination receives.
    pub stop_at_destination: bool,
    /// Open the TCP connection first. Off when the caller already has one.
    pub handshake: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { max_ttl: DEFAULT_MAX_TTL, stop_at_destination: true, handshake: true }
    }
}

pub fn trace<T: Transport + ?Sized>(spec: &ProbeSpec, max_ttl: u8, transport: &mut T) -> Result<TracePath, TraceError> {
    trace_with(spec, &TraceOptions { max_ttl, ..TraceOptions::default() }, transport)
}

pub fn trace_with<T: Transport + ?Sized>(
    spec: &ProbeSpec,
    options: &TraceOptions,
    transport: &mut T,
) -> Result<TracePath, TraceError> {
    let max_ttl = options.max_ttl;
    if max_ttl == 0 || max_ttl as usize > MAX_HOPS {
        return Err(TraceError::InvalidMaxTtl(max_ttl));
    }
    spec.validate()?;
    if spec.protocol != AppProtocol::Dns && options.handshake && handshake(spec, transport)? != Handshake::Established {
        return Err(TraceError::HandshakeFailed(spec.source));
    }

    let mut hops: Vec<Option<NodeId>> = Vec::new();
    let mut signals = Vec::new();
    let mut terminal = Terminal::Exhausted;
    let mut reached_at = None;
    for ttl in 1..=max_ttl {
        let x = transport.exchange(&spec.payload_packet(ttl, ttl as u16))?;
        hops.push(None);
        let mut reset = false;
        for reply in &x.replies {
            match reply.kind {
                PacketKind::IcmpTtlExceeded => {
                    let Some(q) = reply.quoted else { continue };
                    if q.source != spec.source || q.ip_id == 0 || q.ip_id > max_ttl as u16 {
                        continue;
                    }
                    let slot = q.ip_id as usize - 1;
                    if slot < hops.len() {
                        hops[slot] = transport.resolve(reply.flow.src_ip);
                    }
                }
                PacketKind::TcpRst => {
                    reset = true;
                    signals.push(CensorSignal { ttl, kind: reply.kind, tag: String::new() });
                }
                PacketKind::HttpResponse | PacketKind::DnsResponse if !x.delivered => {
                    signals.push(CensorSignal { ttl, kind: reply.kind, tag: reply.body_tag.clone() });
                }
                _ => {}
            }
        }
        if x.delivered && reached_at.is_none() {
            reached_at = Some(ttl as usize - 1);
            terminal = Terminal::ReachedDestination;
            if options.stop_at_destination {
                break;
            }
        }
        if reset {
            hops.pop();
            terminal = Terminal::CensoredAt(hops.iter().rposition(Option::is_some));
            break;
        }
    }
    // copies the destination received are not hops
    if let Some(n) = reached_at {
        hops.truncate(n);
    }
    Ok(TracePath { dst: spec.destination, source: spec.source, protocol: spec.protocol, hops, terminal, signals })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("no traces to merge")]
    NoTraces,
    #[error("traces go to different destinations ({0} and {1})")]
    MixedDestinations(Ipv4Address, Ipv4Address),
}

/// Groups traces by source parameters. A group's path is the set of hops
/// that answered in any of its traces.
pub fn merge_paths(traces: &[TracePath]) -> Result<PathSet, MergeError> {
    let first = traces.first().ok_or(MergeError::NoTraces)?;
    let mut groups: BTreeMap<SourceParams, PathGroup> = BTreeMap::new();
    for t in traces {
        if t.dst != first.dst {
            return Err(MergeError::MixedDestinations(first.dst, t.dst));
        }
        groups.entry(t.source).or_default().add_route(&t.hops);
    }
    Ok(PathSet { destination: first.dst, groups })
}
