//! Planners and drivers for the two experiment designs.
//!
//! RQ1 asks how many distinct paths a destination shows when source
//! parameters are held fixed or varied: four plans of 144 traces each.
//! RQ2 sweeps a 208 x 8 grid of source addresses and ports per destination
//! and asks whether the censorship verdict changes across it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Address, SourceParams, Subnet24, EPHEMERAL_PORTS};
use crate::analysis::{
    build_dual_graph, classify_effect, AnalysisError, Annotations, DualGraph, EffectReport, PathSet,
};
use crate::flow::{fnv1a64, AppProtocol};
use crate::packet::Sensitivity;
use crate::prober::{
    session_key, verdict_matrix, BlockpageRegistry, DomainPair, ProbeConfig, ProbeError, ProbeSpec, Retries,
    SessionSource, Transport, VerdictMatrix,
};
use crate::runlog::{
    CellKey, GroundTruthRecord, ObservationRecord, Payload, Record, RunData, RunLog, RunLogError, VerdictRecord,
};
use crate::tracer::{merge_paths, trace_with, MergeError, TraceError, TraceOptions, TracePath};
use crate::verdict::is_affected;

pub const RQ1_SAMPLES: usize = 144;
pub const RQ1_SIDE: usize = 12;
pub const RQ2_IPS: usize = 208;
pub const RQ2_PORTS: usize = 8;
pub const DEFAULT_AS_CAP: usize = 60;
pub const DEFAULT_BENIGN_DOMAIN: &str = "example.com";

/// Source /24 the planners draw addresses from unless told otherwise.
pub fn default_source_prefix() -> Subnet24 {
    Subnet24::of(Ipv4Address::new(198, 51, 100, 0))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no candidate destinations")]
    EmptyCandidates,
    #[error("plan needs at least one destination")]
    NoDestinations,
    #[error("plan needs at least one protocol")]
    NoProtocols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variation {
    AllConstant,
    VaryPort,
    VaryIp,
    VaryBoth,
}

impl Variation {
    pub const ALL: [Variation; 4] =
        [Variation::AllConstant, Variation::VaryPort, Variation::VaryIp, Variation::VaryBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Variation::AllConstant => "all-constant",
            Variation::VaryPort => "vary-port",
            Variation::VaryIp => "vary-ip",
            Variation::VaryBoth => "vary-both",
        }
    }
}

impl fmt::Display for Variation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variation::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown variation `{s}`"))
    }
}

/// Generator for one planning decision, keyed so that plans for different
/// destinations and variations never share draws.
fn plan_rng(seed: u64, destination: Option<Ipv4Address>, label: &str) -> ChaCha8Rng {
    let mut key = seed.to_be_bytes().to_vec();
    key.extend_from_slice(&destination.map_or(0, |d| d.0).to_be_bytes());
    key.extend_from_slice(label.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&key))
}

/// `per_class` distinct usable host octets for each low-3-bit class,
/// shuffled together.
fn stratified_hosts(rng: &mut ChaCha8Rng, per_class: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(per_class * 8);
    for class in 0..8u8 {
        let pool: Vec<u8> = (1..=254u8).filter(|h| h & 7 == class).collect();
        out.extend(sample(rng, pool.len(), per_class).into_iter().map(|i| pool[i]));
    }
    out.shuffle(rng);
    out
}

/// `per_class` distinct ephemeral ports for each low-3-bit class, shuffled.
fn stratified_ports(rng: &mut ChaCha8Rng, per_class: usize) -> Vec<u16> {
    let (lo, hi) = (*EPHEMERAL_PORTS.start(), *EPHEMERAL_PORTS.end());
    let mut out = Vec::with_capacity(per_class * 8);
    for class in 0..8u16 {
        let first = lo + (class + 8 - lo % 8) % 8;
        let count = ((hi - first) / 8 + 1) as usize;
        out.extend(sample(rng, count, per_class).into_iter().map(|k| first + 8 * k as u16));
    }
    out.shuffle(rng);
    out
}

fn distinct_hosts(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    sample(rng, 254, n).into_iter().map(|i| i as u8 + 1).collect()
}

fn distinct_ports(rng: &mut ChaCha8Rng, n: usize) -> Vec<u16> {
    let lo = *EPHEMERAL_PORTS.start();
    let span = (*EPHEMERAL_PORTS.end() - lo) as usize + 1;
    sample(rng, span, n).into_iter().map(|i| lo + i as u16).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rq1Plan {
    pub variation: Variation,
    pub destination: Ipv4Address,
    pub protocol: AppProtocol,
    pub domain: String,
    pub samples: Vec<SourceParams>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub source_prefix: Subnet24,
    pub benign_domain: String,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { source_prefix: default_source_prefix(), benign_domain: DEFAULT_BENIGN_DOMAIN.to_string() }
    }
}

pub fn plan_rq1(destination: Ipv4Address, protocol: AppProtocol, seed: u64) -> [Rq1Plan; 4] {
    plan_rq1_with(destination, protocol, seed, &PlanSettings::default())
}

/// The four RQ1 plans, 144 samples each. Varied fields take 144 distinct
/// values, 18 from each low-3-bit class.
pub fn plan_rq1_with(
    destination: Ipv4Address,
    protocol: AppProtocol,
    seed: u64,
    settings: &PlanSettings,
) -> [Rq1Plan; 4] {
    let prefix = settings.source_prefix;
    let ip = |h: u8| prefix.host(h);
    let per_class = RQ1_SAMPLES / 8;
    Variation::ALL.map(|variation| {
        let mut rng = plan_rng(seed, Some(destination), variation.as_str());
        let samples = match variation {
            Variation::AllConstant => {
                let src = SourceParams::new(ip(rng.random_range(1..=254)), rng.random_range(EPHEMERAL_PORTS));
                vec![src; RQ1_SAMPLES]
            }
            Variation::VaryPort => {
                let host = ip(rng.random_range(1..=254));
                stratified_ports(&mut rng, per_class).into_iter().map(|p| SourceParams::new(host, p)).collect()
            }
            Variation::VaryIp => {
                let port = rng.random_range(EPHEMERAL_PORTS);
                stratified_hosts(&mut rng, per_class).into_iter().map(|h| SourceParams::new(ip(h), port)).collect()
            }
            Variation::VaryBoth => {
                let hosts = distinct_hosts(&mut rng, RQ1_SIDE);
                let ports = distinct_ports(&mut rng, RQ1_SIDE);
                hosts.iter().flat_map(|&h| ports.iter().map(move |&p| SourceParams::new(ip(h), p))).collect()
            }
        };
        Rq1Plan { variation, destination, protocol, domain: settings.benign_domain.clone(), samples }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rq2Plan {
    pub seed: u64,
    pub source_prefix: Subnet24,
    pub ips: Vec<Ipv4Address>,
    pub ports: Vec<u16>,
    pub destinations: Vec<Ipv4Address>,
    pub protocols: Vec<AppProtocol>,
    pub domains: DomainPair,
}

impl Rq2Plan {
    /// Every (address, port) pair, addresses outermost.
    pub fn grid(&self) -> Vec<SourceParams> {
        self.ips.iter().flat_map(|&ip| self.ports.iter().map(move |&p| SourceParams::new(ip, p))).collect()
    }
}

/// 208 source addresses (26 per low-3-bit class) and 8 ports (one per
/// low-3-bit class) shared by every destination.
pub fn plan_rq2(
    destinations: &[Ipv4Address],
    protocols: &[AppProtocol],
    domains: DomainPair,
    seed: u64,
    source_prefix: Subnet24,
) -> Result<Rq2Plan, PlanError> {
    if destinations.is_empty() {
        return Err(PlanError::NoDestinations);
    }
    if protocols.is_empty() {
        return Err(PlanError::NoProtocols);
    }
    let mut rng = plan_rng(seed, None, "rq2-grid");
    let ips = stratified_hosts(&mut rng, RQ2_IPS / 8).into_iter().map(|h| source_prefix.host(h)).collect();
    let ports = stratified_ports(&mut rng, RQ2_PORTS / 8);
    Ok(Rq2Plan {
        seed,
        source_prefix,
        ips,
        ports,
        destinations: destinations.to_vec(),
        protocols: protocols.to_vec(),
        domains,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub addr: Ipv4Address,
    pub asn: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    OnePerAs,
    CapPerAs { cap: usize },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::CapPerAs { cap: DEFAULT_AS_CAP }
    }
}

/// Seeded per-AS sample of candidates, ASes in ascending order.
pub fn sample_destinations(candidates: &[Candidate], mode: Sampling, seed: u64) -> Result<Vec<Candidate>, PlanError> {
    if candidates.is_empty() {
        return Err(PlanError::EmptyCandidates);
    }
    let cap = match mode {
        Sampling::OnePerAs => 1,
        Sampling::CapPerAs { cap } => cap,
    };
    let mut by_as: BTreeMap<u32, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        by_as.entry(c.asn).or_default().push(*c);
    }
    let mut out = Vec::new();
    for (asn, mut group) in by_as {
        group.sort();
        group.dedup();
        let mut rng = plan_rng(seed, None, &format!("as{asn}"));
        group.shuffle(&mut rng);
        group.truncate(cap);
        out.extend(group);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rq1Options {
    pub trace: TraceOptions,
    pub retries: Retries,
    /// Trace all samples with identical parameters over one connection
    /// instead of a fresh handshake per trace.
    pub reuse_session: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rq1Result {
    pub variation: Variation,
    pub destination: Ipv4Address,
    pub protocol: AppProtocol,
    pub traces: Vec<Result<TracePath, TraceError>>,
}

impl Rq1Result {
    pub fn num_paths(&self) -> Result<usize, MergeError> {
        let ok: Vec<TracePath> = self.traces.iter().filter_map(|t| t.as_ref().ok().cloned()).collect();
        Ok(merge_paths(&ok)?.num_paths().expect("merged traces form at least one group"))
    }
}

/// Traces the chosen samples of `plan`, returning `(sample index, trace)`
/// in index order.
pub fn trace_samples<S: SessionSource>(
    plan: &Rq1Plan,
    indices: &[usize],
    sessions: &S,
    options: &Rq1Options,
) -> Vec<(usize, Result<TracePath, TraceError>)> {
    let mut jobs: Vec<Vec<usize>> = Vec::new();
    if options.reuse_session {
        let mut by_src: BTreeMap<SourceParams, Vec<usize>> = BTreeMap::new();
        for &i in indices {
            by_src.entry(plan.samples[i]).or_default().push(i);
        }
        jobs.extend(by_src.into_values());
    } else {
        jobs.extend(indices.iter().map(|&i| vec![i]));
    }
    let mut out: Vec<_> = jobs
        .par_iter()
        .flat_map_iter(|job| {
            let spec = |i: usize| ProbeSpec {
                retries: options.retries,
                ..ProbeSpec::new(
                    plan.protocol,
                    plan.destination,
                    plan.domain.clone(),
                    Sensitivity::Control,
                    plan.samples[i],
                )
            };
            let first = spec(job[0]);
            let mut session = sessions.open(session_key(&first.flow(), "rq1", job[0] as u64));
            let mut connected = false;
            job.iter()
                .map(|&i| {
                    session.advance(1);
                    let opts = TraceOptions { handshake: options.trace.handshake && !connected, ..options.trace };
                    let r = trace_with(&spec(i), &opts, &mut session);
                    connected |= r.is_ok() && options.reuse_session;
                    (i, r)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    out.sort_by_key(|(i, _)| *i);
    out
}

pub fn run_rq1<S: SessionSource>(plans: &[Rq1Plan], sessions: &S, options: &Rq1Options) -> Vec<Rq1Result> {
    plans
        .iter()
        .map(|plan| {
            let all: Vec<usize> = (0..plan.samples.len()).collect();
            Rq1Result {
                variation: plan.variation,
                destination: plan.destination,
                protocol: plan.protocol,
                traces: trace_samples(plan, &all, sessions, options).into_iter().map(|(_, t)| t).collect(),
            }
        })
        .collect()
}

/// One verdict matrix per (destination, protocol).
pub fn run_rq2<S: SessionSource>(
    plan: &Rq2Plan,
    sessions: &S,
    config: &ProbeConfig,
    registry: &BlockpageRegistry,
) -> Vec<VerdictMatrix> {
    let grid = plan.grid();
    plan.destinations
        .iter()
        .flat_map(|&dst| plan.protocols.iter().map(move |&p| (dst, p)))
        .map(|(dst, protocol)| {
            verdict_matrix(dst, &grid, protocol, &plan.domains, sessions, config, registry)
                .expect("planned grids are never empty")
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Log(#[from] RunLogError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// What a logged run did on this invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

impl RunStats {
    /// The failure is the transport's, not the data's.
    pub fn transport_failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Runs the RQ1 traces not yet in `data` and appends them to `log`.
pub fn run_rq1_logged<S: SessionSource>(
    plans: &[Rq1Plan],
    sessions: &S,
    options: &Rq1Options,
    run_id: &str,
    data: &RunData,
    log: &mut RunLog,
) -> Result<RunStats, ExperimentError> {
    let mut stats = RunStats::default();
    for plan in plans {
        let done: std::collections::BTreeSet<u32> =
            data.traces_for(plan.destination, plan.protocol, plan.variation.as_str()).map(|(s, _)| s).collect();
        let missing: Vec<usize> = (0..plan.samples.len()).filter(|i| !done.contains(&(*i as u32))).collect();
        stats.skipped += plan.samples.len() - missing.len();
        let mut records = Vec::new();
        for (i, r) in trace_samples(plan, &missing, sessions, options) {
            match r {
                Ok(t) => {
                    stats.executed += 1;
                    records.extend(Record::trace_rows(run_id, &t, plan.variation.as_str(), i as u32));
                }
                Err(e) => stats.failures.push(format!("{} {} sample {i}: {e}", plan.destination, plan.variation)),
            }
        }
        log.append_batch(&records)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rq2Options {
    pub probe: ProbeConfig,
    /// Cells per log batch; bounds the work lost to a crash.
    pub batch: usize,
    /// Run cells in a seeded random order. Results do not depend on it.
    pub shuffle: bool,
    /// After the sweep, trace every decided cell of affected destinations
    /// with the control domain.
    pub trace_affected: bool,
    pub trace: TraceOptions,
}

impl Default for Rq2Options {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            batch: 512,
            shuffle: false,
            trace_affected: false,
            trace: TraceOptions::default(),
        }
    }
}

pub const RQ2_TRACE_VARIATION: &str = "rq2";

fn cell_records(run_id: &str, cell: CellKey, outcome: &crate::prober::CellOutcome) -> Vec<Record> {
    let mut out = Vec::new();
    for (sensitivity, obs) in [(Sensitivity::Control, &outcome.control), (Sensitivity::Sensitive, &outcome.sensitive)] {
        for (rep, o) in obs.iter().enumerate() {
            out.push(Record::new(
                run_id,
                Payload::Observation(ObservationRecord {
                    cell,
                    sensitivity,
                    repetition: rep as u32,
                    epoch: o.epoch,
                    outcome: o.outcome.name().to_string(),
                    tag: o.outcome.tag().map(String::from),
                }),
            ));
        }
    }
    for e in &outcome.events {
        out.push(Record::new(
            run_id,
            Payload::CensorEventGroundTruth(GroundTruthRecord {
                cell,
                at: e.at,
                rule: e.rule.0,
                action: e.action.name().to_string(),
                epoch: e.epoch,
                residual: e.residual,
            }),
        ));
    }
    out.push(Record::new(run_id, Payload::Verdict(VerdictRecord { cell, verdict: outcome.verdict })));
    out
}

/// Runs the RQ2 cells not yet in `data`, appending each batch to `log`.
/// Returns stats for this invocation; results are read back from the log.
pub fn run_rq2_logged<S: SessionSource>(
    plan: &Rq2Plan,
    sessions: &S,
    registry: &BlockpageRegistry,
    options: &Rq2Options,
    run_id: &str,
    data: &RunData,
    log: &mut RunLog,
) -> Result<RunStats, ExperimentError> {
    let mut stats = RunStats::default();
    let grid = plan.grid();
    let mut verdicts = data.verdicts.clone();
    for &dst in &plan.destinations {
        for &protocol in &plan.protocols {
            let done = verdicts.entry((dst, protocol)).or_default();
            let mut missing: Vec<SourceParams> = grid.iter().filter(|s| !done.contains_key(s)).copied().collect();
            stats.skipped += grid.len() - missing.len();
            if options.shuffle {
                missing.shuffle(&mut plan_rng(plan.seed, Some(dst), protocol.as_str()));
            }
            for chunk in missing.chunks(options.batch.max(1)) {
                let m = verdict_matrix(dst, chunk, protocol, &plan.domains, sessions, &options.probe, registry)
                    .expect("chunks are never empty");
                let mut records = Vec::new();
                for src in chunk {
                    match &m.cells[src] {
                        Ok(cell) => {
                            stats.executed += 1;
                            done.insert(*src, cell.verdict);
                            records.extend(cell_records(run_id, CellKey::new(dst, *src, protocol), cell));
                        }
                        Err(e) => stats.failures.push(format!("{dst} {protocol} {src}: {e}")),
                    }
                }
                log.append_batch(&records)?;
            }
        }
    }
    if options.trace_affected {
        trace_affected(plan, sessions, options, run_id, data, &verdicts, log, &mut stats)?;
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn trace_affected<S: SessionSource>(
    plan: &Rq2Plan,
    sessions: &S,
    options: &Rq2Options,
    run_id: &str,
    data: &RunData,
    verdicts: &BTreeMap<(Ipv4Address, AppProtocol), BTreeMap<SourceParams, crate::verdict::Verdict>>,
    log: &mut RunLog,
    stats: &mut RunStats,
) -> Result<(), ExperimentError> {
    for (&(dst, protocol), cells) in verdicts {
        if !is_affected(cells.values()) {
            continue;
        }
        let traced: std::collections::BTreeSet<SourceParams> =
            data.traces_for(dst, protocol, RQ2_TRACE_VARIATION).map(|(_, t)| t.source).collect();
        let todo: Vec<SourceParams> =
            cells.iter().filter(|(s, v)| v.is_decided() && !traced.contains(s)).map(|(s, _)| *s).collect();
        let results: Vec<_> = todo
            .par_iter()
            .map(|&src| {
                let spec = ProbeSpec {
                    retries: options.probe.retries,
                    ..ProbeSpec::new(protocol, dst, plan.domains.control.clone(), Sensitivity::Control, src)
                };
                let mut session = sessions.open(session_key(&spec.flow(), "rq2-trace", 0));
                session.advance(1);
                (src, trace_with(&spec, &options.trace, &mut session))
            })
            .collect();
        let mut records = Vec::new();
        for (src, r) in results {
            match r {
                Ok(t) => {
                    stats.executed += 1;
                    records.extend(Record::trace_rows(run_id, &t, RQ2_TRACE_VARIATION, src_sample(&src)));
                }
                Err(e) => stats.failures.push(format!("{dst} {protocol} {src} trace: {e}")),
            }
        }
        log.append_batch(&records)?;
    }
    Ok(())
}

/// Sample number of an RQ2 trace: the source parameters packed together,
/// so each cell has exactly one.
fn src_sample(src: &SourceParams) -> u32 {
    (src.src_ip.host_octet() as u32) << 16 | src.src_port as u32
}

/// Report on a `ProbeError` without the whole matrix.
pub fn describe_failures(m: &VerdictMatrix) -> Vec<String> {
    m.failures().map(|(s, e): (&SourceParams, &ProbeError)| format!("{} {s}: {e}", m.destination)).collect()
}

/// Control-domain traces of one RQ2 destination merged into a path set,
/// with each group labelled by its cell's verdict.
pub fn rq2_pathset(data: &RunData, dst: Ipv4Address, protocol: AppProtocol) -> Result<PathSet, AnalysisError> {
    let traces: Vec<TracePath> = data.traces_for(dst, protocol, RQ2_TRACE_VARIATION).map(|(_, t)| t.clone()).collect();
    let mut ps = merge_paths(&traces).map_err(|_| AnalysisError::EmptyPathSet)?;
    if let Some(v) = data.verdicts.get(&(dst, protocol)) {
        ps.set_verdicts(v);
    }
    Ok(ps)
}

/// Dual graph of one RQ2 destination, using logged ground truth if any.
pub fn rq2_dual_graph(data: &RunData, dst: Ipv4Address, protocol: AppProtocol) -> Result<DualGraph, AnalysisError> {
    let ps = rq2_pathset(data, dst, protocol)?;
    let truth = data.censor_nodes.get(&(dst, protocol)).cloned().unwrap_or_default();
    build_dual_graph(&ps, &truth)
}

pub fn rq2_effect(
    data: &RunData,
    dst: Ipv4Address,
    protocol: AppProtocol,
    annotations: &Annotations,
) -> Result<EffectReport, AnalysisError> {
    classify_effect(&rq2_dual_graph(data, dst, protocol)?, annotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn dst() -> Ipv4Address {
        Ipv4Address::new(203, 0, 113, 4)
    }

    #[test]
    fn rq1_plans_have_the_promised_shape() {
        let plans = plan_rq1(dst(), AppProtocol::Http, 7);
        for p in &plans {
            assert_eq!(p.samples.len(), RQ1_SAMPLES);
            assert_eq!(p.domain, DEFAULT_BENIGN_DOMAIN);
            for s in &p.samples {
                assert!(default_source_prefix().contains(s.src_ip));
                assert!(!matches!(s.src_ip.host_octet(), 0 | 255));
                assert!(EPHEMERAL_PORTS.contains(&s.src_port));
            }
        }
        let ips = |p: &Rq1Plan| p.samples.iter().map(|s| s.src_ip).collect::<BTreeSet<_>>().len();
        let ports = |p: &Rq1Plan| p.samples.iter().map(|s| s.src_port).collect::<BTreeSet<_>>().len();
        let pairs = |p: &Rq1Plan| p.samples.iter().collect::<BTreeSet<_>>().len();
        assert_eq!((ips(&plans[0]), ports(&plans[0]), pairs(&plans[0])), (1, 1, 1));
        assert_eq!((ips(&plans[1]), ports(&plans[1]), pairs(&plans[1])), (1, 144, 144));
        assert_eq!((ips(&plans[2]), ports(&plans[2]), pairs(&plans[2])), (144, 1, 144));
        assert_eq!((ips(&plans[3]), ports(&plans[3]), pairs(&plans[3])), (12, 12, 144));
    }

    #[test]
    fn rq1_varied_fields_cover_every_low3_class() {
        let plans = plan_rq1(dst(), AppProtocol::Https, 99);
        let mut hist = [0; 8];
        for s in &plans[2].samples {
            hist[s.src_ip.low_bits(3) as usize] += 1;
        }
        assert_eq!(hist, [18; 8]);
        let mut hist = [0; 8];
        for s in &plans[1].samples {
            hist[(s.src_port & 7) as usize] += 1;
        }
        assert_eq!(hist, [18; 8]);
    }

    #[test]
    fn plans_are_deterministic_per_seed() {
        assert_eq!(plan_rq1(dst(), AppProtocol::Http, 1), plan_rq1(dst(), AppProtocol::Http, 1));
        assert_ne!(plan_rq1(dst(), AppProtocol::Http, 1)[3], plan_rq1(dst(), AppProtocol::Http, 2)[3]);
        let a =
            plan_rq2(&[dst()], &[AppProtocol::Http], DomainPair::new("a", "b"), 5, default_source_prefix()).unwrap();
        let b =
            plan_rq2(&[dst()], &[AppProtocol::Http], DomainPair::new("a", "b"), 5, default_source_prefix()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rq2_grid_is_uniform_over_low_bits() {
        for seed in [0, 1, 2, 77] {
            let p = plan_rq2(&[dst()], &[AppProtocol::Http], DomainPair::new("a", "b"), seed, default_source_prefix())
                .unwrap();
            let mut hist = [0; 8];
            for ip in &p.ips {
                hist[ip.low_bits(3) as usize] += 1;
            }
            assert_eq!(hist, [26; 8]);
            assert_eq!(p.ips.iter().collect::<BTreeSet<_>>().len(), RQ2_IPS);
            assert_eq!(p.ports.iter().collect::<BTreeSet<_>>().len(), RQ2_PORTS);
            assert_eq!(p.grid().len(), 1664);
        }
        let a =
            plan_rq2(&[dst()], &[AppProtocol::Http], DomainPair::new("a", "b"), 0, default_source_prefix()).unwrap();
        let b =
            plan_rq2(&[dst()], &[AppProtocol::Http], DomainPair::new("a", "b"), 1, default_source_prefix()).unwrap();
        assert_ne!(a.ports, b.ports);
        assert_eq!(
            plan_rq2(&[], &[AppProtocol::Http], DomainPair::new("a", "b"), 0, default_source_prefix()),
            Err(PlanError::NoDestinations)
        );
    }

    #[test]
    fn destination_sampling() {
        let mk = |asn: u32, n: u8| (0..n).map(move |i| Candidate { addr: Ipv4Address::new(10, asn as u8, 0, i), asn });
        let three: Vec<_> = mk(1, 5).chain(mk(2, 5)).chain(mk(3, 5)).collect();
        assert_eq!(sample_destinations(&three, Sampling::OnePerAs, 0).unwrap().len(), 3);
        let big: Vec<_> = mk(1, 100).collect();
        assert_eq!(sample_destinations(&big, Sampling::default(), 0).unwrap().len(), 60);
        let small: Vec<_> = mk(1, 10).collect();
        assert_eq!(sample_destinations(&small, Sampling::default(), 0).unwrap().len(), 10);
        assert_eq!(
            sample_destinations(&big, Sampling::default(), 4),
            sample_destinations(&big, Sampling::default(), 4)
        );
        assert_eq!(sample_destinations(&[], Sampling::OnePerAs, 0), Err(PlanError::EmptyCandidates));
    }

    #[test]
    fn variation_names_parse() {
        for v in Variation::ALL {
            assert_eq!(v.as_str().parse::<Variation>(), Ok(v));
        }
    }
}
