use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::addr::{Ipv4Address, SourceParams};
use crate::censor::CensorEvent;
use crate::flow::AppProtocol;
use crate::packet::Sensitivity;
use crate::prober::transport::{session_key, SessionSource, Transport};
use crate::prober::{classify, run_paired, BlockpageRegistry, Observation, ProbeError, ProbeSpec, Retries};
use crate::verdict::{is_affected, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPair {
    pub control: String,
    pub sensitive: String,
}

impl DomainPair {
    pub fn new(control: impl Into<String>, sensitive: impl Into<String>) -> Self {
        Self { control: control.into(), sensitive: sensitive.into() }
    }
}

/// Knobs shared by every cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub repetitions: u32,
    pub epoch_interval: u64,
    pub retries: Retries,
    pub sensitive_first: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { repetitions: 3, epoch_interval: 1, retries: Retries::default(), sensitive_first: false }
    }
}

impl ProbeConfig {
    pub fn spec(
        &self,
        destination: Ipv4Address,
        source: SourceParams,
        protocol: AppProtocol,
        domain: &str,
        sensitivity: Sensitivity,
    ) -> ProbeSpec {
        ProbeSpec {
            repetitions: self.repetitions,
            epoch_interval: self.epoch_interval,
            retries: self.retries,
            ..ProbeSpec::new(protocol, destination, domain, sensitivity, source)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellOutcome {
    pub control: Vec<Observation>,
    pub sensitive: Vec<Observation>,
    pub verdict: Verdict,
    /// Censor actions the simulator saw during this cell.
    pub events: Vec<CensorEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictMatrix {
    pub destination: Ipv4Address,
    pub protocol: AppProtocol,
    pub cells: BTreeMap<SourceParams, Result<CellOutcome, ProbeError>>,
}

impl VerdictMatrix {
    /// Verdicts of the cells that ran to completion.
    pub fn verdicts(&self) -> BTreeMap<SourceParams, Verdict> {
        self.cells.iter().filter_map(|(k, c)| c.as_ref().ok().map(|c| (*k, c.verdict))).collect()
    }

    pub fn is_affected(&self) -> bool {
        is_affected(self.verdicts().values())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&SourceParams, &ProbeError)> {
        self.cells.iter().filter_map(|(k, c)| c.as_ref().err().map(|e| (k, e)))
    }
}

/// Paired control and sensitive probes for one (destination, source) cell
/// in a session of its own.
pub fn probe_cell<S: SessionSource>(
    destination: Ipv4Address,
    source: SourceParams,
    protocol: AppProtocol,
    domains: &DomainPair,
    sessions: &S,
    config: &ProbeConfig,
    registry: &BlockpageRegistry,
) -> Result<CellOutcome, ProbeError> {
    let control = config.spec(destination, source, protocol, &domains.control, Sensitivity::Control);
    let sensitive = config.spec(destination, source, protocol, &domains.sensitive, Sensitivity::Sensitive);
    let mut session = sessions.open(session_key(&control.flow(), "cell", 0));
    let (c, s) = run_paired(&control, &sensitive, config.sensitive_first, &mut session)?;
    let verdict = classify(&c, &s, protocol, registry).expect("paired probes have equal, non-empty lengths");
    Ok(CellOutcome { control: c, sensitive: s, verdict, events: session.take_ground_truth() })
}

/// Runs every cell of `grid` against one destination. Cells run in
/// parallel and fail independently.
pub fn verdict_matrix<S: SessionSource>(
    destination: Ipv4Address,
    grid: &[SourceParams],
    protocol: AppProtocol,
    domains: &DomainPair,
    sessions: &S,
    config: &ProbeConfig,
    registry: &BlockpageRegistry,
) -> Result<VerdictMatrix, ProbeError> {
    if grid.is_empty() {
        return Err(ProbeError::EmptyGrid);
    }
    let cells: Vec<_> = grid
        .par_iter()
        .map(|&src| (src, probe_cell(destination, src, protocol, domains, sessions, config, registry)))
        .collect();
    Ok(VerdictMatrix { destination, protocol, cells: cells.into_iter().collect() })
}
