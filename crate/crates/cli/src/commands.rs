use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use flowstable_core::analysis::{bit_group_summary, Annotations, GroupBy};
use flowstable_core::experiments::{
    default_source_prefix, plan_rq1, plan_rq2, rq2_dual_graph, rq2_effect, run_rq1_logged, run_rq2_logged,
    sample_destinations, Candidate, Rq1Options, Rq1Plan, Rq2Options, Rq2Plan, RunStats, Sampling, RQ2_TRACE_VARIATION,
};
use flowstable_core::prober::{
    session_key, BlockpageRegistry, DomainPair, LiveBackend, ProbeConfig, ProbeError, ProbeSpec, SessionSource,
    SimBackend, Transport,
};
use flowstable_core::report::{
    affected_table, bits_table, cdf_table, effects_table, graph_tables, path_count_table, Table,
};
use flowstable_core::runlog::{read_log, MetaRecord, Payload, Record, RunData, RunLog};
use flowstable_core::simnet::{load_topology, Role};
use flowstable_core::tracer::{merge_paths, trace, TraceError};
use flowstable_core::{fnv1a64, Ipv4Address, Sensitivity, SourceParams, Topology};
use serde::Deserialize;

use crate::{Command, Failure, TransportKind};

type Result<T> = std::result::Result<T, Failure>;

pub fn run(command: Command, transport: TransportKind) -> Result<()> {
    match command {
        Command::Validate { topology } => validate(&topology),
        Command::Rq1 { topology, dests, protocol, seed, out, report, plan, plan_out, reuse_session, run_id } => {
            let input = Input::load(&topology)?;
            let plans: Vec<Rq1Plan> = match &plan {
                Some(p) => read_json(p)?,
                None => dests.iter().flat_map(|&d| plan_rq1(d, protocol, seed.seed)).collect(),
            };
            for p in &plans {
                input.require_destination(p.destination)?;
            }
            let plan_json = serde_json::to_string_pretty(&plans).expect("plans serialize");
            if let Some(path) = &plan_out {
                write_text(path, &plan_json)?;
            }
            let options = Rq1Options { reuse_session, ..Rq1Options::default() };
            let mut run = LoggedRun::open(&out, "rq1", seed.seed, &input, &plan_json, run_id)?;
            let stats = match transport {
                TransportKind::Sim => run_rq1_logged(
                    &plans,
                    &SimBackend::new(&input.topology),
                    &options,
                    &run.id,
                    &run.data,
                    &mut run.log,
                ),
                TransportKind::Live => run_rq1_logged(&plans, &LiveBackend, &options, &run.id, &run.data, &mut run.log),
            }
            .map_err(|e| anyhow!(e))?;
            let data = run.reload()?;
            let mut rows = Vec::new();
            for p in &plans {
                let traces: Vec<_> =
                    data.traces_for(p.destination, p.protocol, p.variation.as_str()).map(|(_, t)| t.clone()).collect();
                if let Ok(ps) = merge_paths(&traces) {
                    rows.push((p.variation, ps.num_paths().expect("merged set is non-empty")));
                }
            }
            emit(&path_count_table(&rows), report.as_deref())?;
            finish(&stats, transport)
        }
        Command::Rq2 {
            topology,
            dests,
            protocol,
            seed,
            out,
            control,
            sensitive,
            registry,
            per_as,
            table,
            cdf,
            trace_affected,
            batch,
            shuffle,
            repetitions,
            plan,
            plan_out,
            run_id,
        } => {
            if per_as == 0 || batch == 0 || repetitions == 0 {
                return Err(Failure::Usage("--per-as, --batch and --repetitions must be positive".into()));
            }
            let input = Input::load(&topology)?;
            let plan: Rq2Plan = match (&plan, &dests) {
                (Some(p), _) => read_json(p)?,
                (None, Some(d)) => {
                    let candidates = read_destinations(d, &input.topology)?;
                    let sampled = sample_destinations(&candidates, Sampling::CapPerAs { cap: per_as }, seed.seed)
                        .map_err(|e| anyhow!(e))?;
                    let addrs: Vec<Ipv4Address> = sampled.iter().map(|c| c.addr).collect();
                    let domains = DomainPair::new(control, sensitive);
                    plan_rq2(&addrs, &protocol, domains, seed.seed, default_source_prefix()).map_err(|e| anyhow!(e))?
                }
                (None, None) => return Err(Failure::Usage("one of --dests or --plan is required".into())),
            };
            for &d in &plan.destinations {
                input.require_destination(d)?;
            }
            let plan_json = serde_json::to_string_pretty(&plan).expect("plan serializes");
            if let Some(path) = &plan_out {
                write_text(path, &plan_json)?;
            }
            let registry = match &registry {
                Some(p) => BlockpageRegistry::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => BlockpageRegistry::new(),
            };
            let options = Rq2Options {
                probe: ProbeConfig { repetitions, ..ProbeConfig::default() },
                batch,
                shuffle,
                trace_affected,
                ..Rq2Options::default()
            };
            let mut run = LoggedRun::open(&out, "rq2", seed.seed, &input, &plan_json, run_id)?;
            let stats = match transport {
                TransportKind::Sim => run_rq2_logged(
                    &plan,
                    &SimBackend::new(&input.topology),
                    &registry,
                    &options,
                    &run.id,
                    &run.data,
                    &mut run.log,
                ),
                TransportKind::Live => {
                    run_rq2_logged(&plan, &LiveBackend, &registry, &options, &run.id, &run.data, &mut run.log)
                }
            }
            .map_err(|e| anyhow!(e))?;
            let data = run.reload()?;
            let verdicts: BTreeMap<_, _> = data
                .verdicts
                .iter()
                .filter(|((d, p), _)| plan.destinations.contains(d) && plan.protocols.contains(p))
                .map(|(k, v)| (*k, v.clone()))
                .collect();
            let asn_of = |d: Ipv4Address| input.topology.node_by_addr(d).map(|n| n.asn);
            affected_table(&verdicts, asn_of)
                .save(table.unwrap_or_else(|| sibling(&out, "affected.csv")))
                .map_err(csv_err)?;
            cdf_table(&verdicts).save(cdf.unwrap_or_else(|| sibling(&out, "cdf.csv"))).map_err(csv_err)?;
            let affected = verdicts.values().filter(|m| flowstable_core::verdict::is_affected(m.values())).count();
            println!(
                "{} measurements run, {} cells already logged, {} of {} destination/protocol pairs affected",
                stats.executed,
                stats.skipped,
                affected,
                verdicts.len()
            );
            finish(&stats, transport)
        }
        Command::Trace { topology, dest, src_ip, src_port, protocol, domain, max_ttl } => {
            let input = Input::load(&topology)?;
            let spec =
                ProbeSpec::new(protocol, dest, domain, Sensitivity::Control, SourceParams::new(src_ip, src_port));
            let key = session_key(&spec.flow(), "trace", 0);
            let result = match transport {
                TransportKind::Sim => {
                    input.require_destination(dest)?;
                    traced(&spec, max_ttl, SimBackend::new(&input.topology).open(key))
                }
                TransportKind::Live => traced(&spec, max_ttl, LiveBackend.open(key)),
            };
            let path = result.map_err(|e| match e {
                TraceError::InvalidMaxTtl(_) => Failure::Usage(e.to_string()),
                TraceError::Probe(ProbeError::Transport(t)) => Failure::Transport(t.to_string()),
                other => Failure::Data(anyhow!(other)),
            })?;
            for (i, hop) in path.hops.iter().enumerate() {
                match hop.and_then(|n| input.topology.node(n)) {
                    Some(n) => println!("{}\t{}\t{}", i + 1, n.id, n.address()),
                    None => println!("{}\t*", i + 1),
                }
            }
            println!("{}", path.terminal);
            Ok(())
        }
        Command::Graph { log, dest, protocol, out, topology, run_id } => {
            let data = load_run(&log, run_id.as_deref())?;
            let topology = topology.map(|p| Input::load(&p)).transpose()?;
            let dual = rq2_dual_graph(&data, dest, protocol).with_context(|| format!("graph of {dest} {protocol}"))?;
            let (nodes, edges) = graph_tables(&dual, topology.as_ref().map(|i| &i.topology));
            nodes.save(suffixed(&out, "nodes.csv")).map_err(csv_err)?;
            edges.save(suffixed(&out, "edges.csv")).map_err(csv_err)?;
            Ok(())
        }
        Command::Classify { log, topology, out, run_id } => {
            let data = load_run(&log, run_id.as_deref())?;
            let input = Input::load(&topology)?;
            let annotations = Annotations::from_topology(&input.topology);
            let mut reports = Vec::new();
            for ((dst, protocol), cells) in &data.verdicts {
                if !flowstable_core::verdict::is_affected(cells.values()) {
                    continue;
                }
                if data.traces_for(*dst, *protocol, RQ2_TRACE_VARIATION).next().is_none() {
                    log::warn!("{dst} {protocol} is affected but was not traced; rerun rq2 with --trace-affected");
                    continue;
                }
                match rq2_effect(&data, *dst, *protocol, &annotations) {
                    Ok(r) => reports.push(r),
                    Err(e) => log::warn!("{dst} {protocol}: {e}"),
                }
            }
            emit(&effects_table(&reports), out.as_deref())
        }
        Command::Bits { log, group_by, protocol, out, run_id } => {
            let data = load_run(&log, run_id.as_deref())?;
            let matrices: Vec<_> = data
                .verdicts
                .iter()
                .filter(|((_, p), _)| protocol.is_none_or(|want| *p == want))
                .map(|(_, m)| m.clone())
                .collect();
            let rows = bits(&matrices, group_by)?;
            emit(&bits_table(&rows), out.as_deref())
        }
    }
}

fn bits(
    matrices: &[BTreeMap<SourceParams, flowstable_core::Verdict>],
    group_by: GroupBy,
) -> Result<Vec<flowstable_core::analysis::BitGroupRow>> {
    if matrices.is_empty() {
        return Err(Failure::Data(anyhow!("the log has no verdicts")));
    }
    Ok(bit_group_summary(matrices, group_by).map_err(|e| anyhow!(e))?)
}

fn traced<T: Transport>(
    spec: &ProbeSpec,
    max_ttl: u8,
    mut session: T,
) -> std::result::Result<flowstable_core::tracer::TracePath, TraceError> {
    session.advance(1);
    trace(spec, max_ttl, &mut session)
}

fn validate(path: &Path) -> Result<()> {
    let input = Input::load(path)?;
    let t = &input.topology;
    let endpoints = t.nodes().filter(|n| n.role == Role::Endpoint).count();
    println!(
        "ok: {} nodes ({} endpoints), {} censor rules, entry {}",
        t.nodes().count(),
        endpoints,
        t.censors().len(),
        t.entry()
    );
    Ok(())
}

struct Input {
    topology: Topology,
    digest: String,
}

impl Input {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let topology = load_topology(&text).with_context(|| format!("loading {}", path.display()))?;
        Ok(Self { topology, digest: format!("{:016x}", fnv1a64(text.as_bytes())) })
    }

    fn require_destination(&self, dst: Ipv4Address) -> Result<()> {
        match self.topology.node_by_addr(dst) {
            Some(n) if n.role == Role::Endpoint => Ok(()),
            _ => Err(Failure::Data(anyhow!("{dst} is not an endpoint of the topology"))),
        }
    }
}

/// An open run log plus what it already holds for this run.
struct LoggedRun {
    path: PathBuf,
    id: String,
    log: RunLog,
    data: RunData,
}

impl LoggedRun {
    /// The run id defaults to a digest of the command, topology and plan,
    /// so rerunning the same inputs resumes the same run.
    fn open(path: &Path, command: &str, seed: u64, input: &Input, plan_json: &str, id: Option<String>) -> Result<Self> {
        let plan_digest = format!("{:016x}", fnv1a64(plan_json.as_bytes()));
        let id = id.unwrap_or_else(|| {
            let key = format!("{command}\n{}\n{plan_digest}\n{seed}", input.digest);
            format!("{command}-{:016x}", fnv1a64(key.as_bytes()))
        });
        let data = if path.exists() { load_run(path, Some(&id))? } else { RunData::default() };
        let mut log = RunLog::open(path).with_context(|| format!("opening {}", path.display()))?;
        if data.meta.is_empty() {
            let meta = MetaRecord { command: command.into(), seed, topology_digest: input.digest.clone(), plan_digest };
            log.append_batch(&[Record::new(&id, Payload::Meta(meta))]).context("writing run log")?;
        }
        Ok(Self { path: path.to_path_buf(), id, log, data })
    }

    fn reload(&self) -> Result<RunData> {
        load_run(&self.path, Some(&self.id))
    }
}

fn load_run(path: &Path, run_id: Option<&str>) -> Result<RunData> {
    let contents = read_log(path).with_context(|| format!("reading {}", path.display()))?;
    for w in &contents.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(RunData::from_records(&contents.records, run_id).with_context(|| format!("indexing {}", path.display()))?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DestinationDoc {
    Addr(Ipv4Address),
    Labelled { addr: Ipv4Address, asn: Option<u32> },
}

fn read_destinations(path: &Path, topology: &Topology) -> Result<Vec<Candidate>> {
    let docs: Vec<DestinationDoc> = read_json(path)?;
    if docs.is_empty() {
        return Err(Failure::Data(anyhow!("{} lists no destinations", path.display())));
    }
    docs.into_iter()
        .map(|d| {
            let (addr, asn) = match d {
                DestinationDoc::Addr(a) => (a, None),
                DestinationDoc::Labelled { addr, asn } => (addr, asn),
            };
            let asn = asn.or_else(|| topology.node_by_addr(addr).map(|n| n.asn));
            match asn {
                Some(asn) => Ok(Candidate { addr, asn }),
                None => Err(Failure::Data(anyhow!("no AS known for destination {addr}"))),
            }
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?)
}

fn emit(table: &Table, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => table.save(p).map_err(csv_err),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(anyhow!(e))
}

/// `run.jsonl` -> `run.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// `prefix` -> `prefix.<ext>`, keeping any dots already in the name.
fn suffixed(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Per-cell failures are reported, not fatal, unless the transport is at
/// fault: then the exit code says so.
fn finish(stats: &RunStats, transport: TransportKind) -> Result<()> {
    for f in stats.failures.iter().take(20) {
        log::warn!("{f}");
    }
    if stats.failures.len() > 20 {
        log::warn!("... and {} more failures", stats.failures.len() - 20);
    }
    if transport == TransportKind::Live && stats.transport_failed() {
        return Err(Failure::Transport(format!(
            "{} measurements failed; the live transport is unavailable",
            stats.failures.len()
        )));
    }
    Ok(())
}
