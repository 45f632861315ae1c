//! Append-only JSON-lines run log.
//!
//! One self-describing record per line, each tagged with its kind, run id
//! and schema version. The log caches results so interrupted runs can
//! resume; a run is always reproducible from its inputs alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Address, SourceParams};
use crate::flow::AppProtocol;
use crate::packet::Sensitivity;
use crate::prober::{Observation, Outcome};
use crate::simnet::NodeId;
use crate::tracer::{Terminal, TracePath};
use crate::verdict::Verdict;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: unknown schema_version {version}")]
    SchemaVersionUnknown { line: usize, version: u64 },
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Cell coordinates shared by most record kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub dst: Ipv4Address,
    pub src_ip: Ipv4Address,
    pub src_port: u16,
    pub protocol: AppProtocol,
}

impl CellKey {
    pub fn new(dst: Ipv4Address, source: SourceParams, protocol: AppProtocol) -> Self {
        Self { dst, src_ip: source.src_ip, src_port: source.src_port, protocol }
    }

    pub fn source(&self) -> SourceParams {
        SourceParams::new(self.src_ip, self.src_port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub command: String,
    pub seed: u64,
    pub topology_digest: String,
    pub plan_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHopRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub variation: String,
    pub sample: u32,
    /// Ladder length of the whole trace; a zero-length trace logs one row
    /// with `ttl = 0`.
    pub len: u32,
    pub ttl: u32,
    pub hop_node: Option<NodeId>,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub sensitivity: Sensitivity,
    pub repetition: u32,
    pub epoch: u64,
    pub outcome: String,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub at: NodeId,
    pub rule: usize,
    pub action: String,
    pub epoch: u64,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Meta(MetaRecord),
    TraceHop(TraceHopRecord),
    Observation(ObservationRecord),
    Verdict(VerdictRecord),
    CensorEventGroundTruth(GroundTruthRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    #[serde(flatten)]
    pub payload: Payload,
    pub run_id: String,
    pub schema_version: u32,
}

impl Record {
    pub fn new(run_id: &str, payload: Payload) -> Self {
        Self { payload, run_id: run_id.to_string(), schema_version: SCHEMA_VERSION }
    }

    /// Rows for one trace, one per ladder rung.
    pub fn trace_rows(run_id: &str, trace: &TracePath, variation: &str, sample: u32) -> Vec<Record> {
        let cell = CellKey::new(trace.dst, trace.source, trace.protocol);
        let len = trace.hops.len() as u32;
        let row = |ttl: u32, hop_node| {
            Record::new(
                run_id,
                Payload::TraceHop(TraceHopRecord {
                    cell,
                    variation: variation.to_string(),
                    sample,
                    len,
                    ttl,
                    hop_node,
                    terminal: trace.terminal,
                }),
            )
        };
        if trace.hops.is_empty() {
            return vec![row(0, None)];
        }
        trace.hops.iter().enumerate().map(|(i, h)| row(i as u32 + 1, *h)).collect()
    }
}

/// Writes records, one JSON object per line.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    /// Opens `path` for appending. A partial last line left by a crash is
    /// cut off first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RunLogError> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path.as_ref())?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            log::warn!("{}: dropping unterminated final record", path.as_ref().display());
            file.set_len(keep as u64)?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &Record) -> Result<(), RunLogError> {
        self.append_batch(std::slice::from_ref(record))
    }

    /// Writes a batch and flushes it as one unit.
    pub fn append_batch(&mut self, records: &[Record]) -> Result<(), RunLogError> {
        for r in records {
            serde_json::to_writer(&mut self.out, r).map_err(io::Error::from)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct LogContents {
    pub records: Vec<Record>,
    pub warnings: Vec<String>,
}

pub fn parse_log(text: &str) -> Result<LogContents, RunLogError> {
    let mut contents = LogContents::default();
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() < text.len() {
        let msg = format!("discarded unterminated final line ({} bytes)", text.len() - complete.len());
        log::warn!("{msg}");
        contents.warnings.push(msg);
    }
    for (i, line) in complete.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| RunLogError::Corrupt { line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("missing schema_version".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(RunLogError::SchemaVersionUnknown { line: line_no, version });
        }
        contents.records.push(serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?);
    }
    Ok(contents)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<LogContents, RunLogError> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// One trace reassembled from its rows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceKey {
    pub dst: Ipv4Address,
    pub protocol: AppProtocol,
    pub variation: String,
    pub sample: u32,
}

/// Everything one run id recorded, indexed for analysis. Later records
/// replace earlier ones with the same key, so a cell re-run after a crash
/// is counted once.
#[derive(Debug, Clone, Default)]
pub struct RunData {
    pub verdicts: BTreeMap<(Ipv4Address, AppProtocol), BTreeMap<SourceParams, Verdict>>,
    pub observations: BTreeMap<CellKey, BTreeMap<(Sensitivity, u32), Observation>>,
    pub censor_nodes: BTreeMap<(Ipv4Address, AppProtocol), BTreeSet<NodeId>>,
    pub traces: BTreeMap<TraceKey, TracePath>,
    pub meta: Vec<MetaRecord>,
}

/// Repetition count, terminal and hops by TTL of one logged trace.
type TraceRows = (u32, Terminal, BTreeMap<u32, Option<NodeId>>);

impl RunData {
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a Record>,
        run_id: Option<&str>,
    ) -> Result<Self, RunLogError> {
        let mut data = RunData::default();
        let mut rows: BTreeMap<(TraceKey, SourceParams), TraceRows> = BTreeMap::new();
        for r in records {
            if run_id.is_some_and(|id| id != r.run_id) {
                continue;
            }
            match &r.payload {
                Payload::Meta(m) => data.meta.push(m.clone()),
                Payload::Verdict(v) => {
                    data.verdicts.entry((v.cell.dst, v.cell.protocol)).or_default().insert(v.cell.source(), v.verdict);
                }
                Payload::Observation(o) => {
                    let outcome = Outcome::from_parts(&o.outcome, o.tag.clone()).ok_or_else(|| {
                        RunLogError::Corrupt { line: 0, message: format!("unknown outcome `{}`", o.outcome) }
                    })?;
                    data.observations
                        .entry(o.cell)
                        .or_default()
                        .insert((o.sensitivity, o.repetition), Observation { epoch: o.epoch, outcome });
                }
                Payload::CensorEventGroundTruth(g) => {
                    data.censor_nodes.entry((g.cell.dst, g.cell.protocol)).or_default().insert(g.at);
                }
                Payload::TraceHop(t) => {
                    let key = TraceKey {
                        dst: t.cell.dst,
                        protocol: t.cell.protocol,
                        variation: t.variation.clone(),
                        sample: t.sample,
                    };
                    let entry =
                        rows.entry((key, t.cell.source())).or_insert_with(|| (t.len, t.terminal, BTreeMap::new()));
                    entry.0 = t.len;
                    entry.1 = t.terminal;
                    if t.ttl > 0 {
                        entry.2.insert(t.ttl, t.hop_node);
                    }
                }
            }
        }
        for ((key, source), (len, terminal, hops)) in rows {
            let hops = (1..=len).map(|ttl| hops.get(&ttl).copied().flatten()).collect();
            let trace = TracePath { dst: key.dst, source, protocol: key.protocol, hops, terminal, signals: vec![] };
            data.traces.insert(key, trace);
        }
        Ok(data)
    }

    pub fn traces_for<'a>(
        &'a self,
        dst: Ipv4Address,
        protocol: AppProtocol,
        variation: &'a str,
    ) -> impl Iterator<Item = (u32, &'a TracePath)> + 'a {
        self.traces
            .iter()
            .filter(move |(k, _)| k.dst == dst && k.protocol == protocol && k.variation == variation)
            .map(|(k, t)| (k.sample, t))
    }

    /// Observations of one cell in repetition order, split into control and
    /// sensitive.
    pub fn cell_observations(&self, cell: &CellKey) -> (Vec<Observation>, Vec<Observation>) {
        let mut control = Vec::new();
        let mut sensitive = Vec::new();
        if let Some(obs) = self.observations.get(cell) {
            for ((s, _), o) in obs {
                match s {
                    Sensitivity::Control => control.push(o.clone()),
                    _ => sensitive.push(o.clone()),
                }
            }
        }
        (control, sensitive)
    }
}
