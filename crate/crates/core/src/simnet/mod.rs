//! Deterministic simulated network with per-router ECMP next-hop selection.

pub mod ecmp;
pub mod forward;
pub mod oracle;
pub mod topology;

pub use ecmp::{next_hop, EcmpPolicy, Selector};
pub use forward::{forward, ForwardError, ForwardState, PacketStream, TransitOutcome, TransitResult, MAX_HOPS};
pub use oracle::{oracle_path, oracle_paths};
pub use topology::{load_topology, Node, NodeId, PolicyDoc, RateDoc, Role, Topology, TopologyDoc, TopologyError};
