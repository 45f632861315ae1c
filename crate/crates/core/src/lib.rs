//! Simulated measurement of routing-induced differences in network
//! censorship: ECMP routing, in-path censors, route-stable probes, per-flow
//! traceroute and the analyses built on them.

pub mod addr;
pub mod analysis;
pub mod censor;
pub mod experiments;
pub mod flow;
pub mod packet;
pub mod prober;
pub mod report;
pub mod runlog;
pub mod scenarios;
pub mod simnet;
pub mod tracer;
pub mod verdict;

pub use addr::{Ipv4Address, SourceParams, Subnet24};
pub use censor::{CensorAction, CensorEvent, CensorRule, Health, RuleId};
pub use flow::{fnv1a64, AppProtocol, FlowField, FlowId, Protocol};
pub use packet::{Packet, PacketKind, Sensitivity};
pub use simnet::{NodeId, Topology};
pub use verdict::{Mechanism, Verdict};
