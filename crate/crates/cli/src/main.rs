//! `flowstable`: plan, run and analyse route-stable censorship measurements
//! against a simulated topology.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowstable_core::analysis::GroupBy;
use flowstable_core::{AppProtocol, Ipv4Address};

const REPORT_HELP: &str = "\
Report columns (fixed order, reals with four decimals):
  rq1 paths:   variation,num_paths,count
  rq2 table:   destination,asn,protocol,affected,decided_cells,no_censorship
  rq2 cdf:     protocol,fraction,cdf
  bits:        group,affected_destinations,censored_cells
  graph nodes: node,address,asn,geo,color
  graph edges: source,target,graph,censor_edge
  classify:    destination,effect,divergence,region,censored_asns,clear_asns,censored_geo,clear_geo

Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error.";

#[derive(Debug, Parser)]
#[command(name = "flowstable", version, about, after_help = REPORT_HELP)]
struct Cli {
    /// Packet transport. `live` needs raw sockets and is not available in
    /// this build; every exchange fails with a transport error.
    #[arg(long, value_enum, default_value_t = TransportKind::Sim, global = true)]
    transport: TransportKind,

    /// Worker threads for cell-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Sim,
    Live,
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Run seed. FLOWSTABLE_SEED is used when the flag is absent.
    #[arg(long, env = "FLOWSTABLE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a topology file against the schema.
    Validate { topology: PathBuf },

    /// Trace the four RQ1 source-parameter variations to each destination.
    Rq1 {
        #[arg(long)]
        topology: PathBuf,
        /// Destination address; repeat for several.
        #[arg(long = "dest", required_unless_present = "plan")]
        dests: Vec<Ipv4Address>,
        #[arg(long, default_value = "https")]
        protocol: AppProtocol,
        #[command(flatten)]
        seed: SeedArg,
        /// Run log (JSON lines); appended to and resumed from.
        #[arg(long)]
        out: PathBuf,
        /// Path-count CSV; standard output when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Read plans from this file instead of planning.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Write the plans used to this file.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        /// Trace samples with identical parameters over one connection.
        #[arg(long)]
        reuse_session: bool,
        #[arg(long)]
        run_id: Option<String>,
    },

    /// Sweep the 208 x 8 source grid against each destination.
    Rq2 {
        #[arg(long)]
        topology: PathBuf,
        /// JSON array of addresses or {"addr", "asn"} objects.
        #[arg(long, required_unless_present = "plan")]
        dests: Option<PathBuf>,
        /// Comma-separated protocols.
        #[arg(long, value_delimiter = ',', default_value = "https")]
        protocol: Vec<AppProtocol>,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "example.com")]
        control: String,
        #[arg(long, default_value = "blocked.test")]
        sensitive: String,
        /// Blockpage registry (JSON); without one no blockpage is recognised.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Destinations sampled per AS.
        #[arg(long, default_value_t = 60)]
        per_as: usize,
        /// Per-destination CSV (default: <out>.affected.csv).
        #[arg(long)]
        table: Option<PathBuf>,
        /// No-censorship CDF CSV (default: <out>.cdf.csv).
        #[arg(long)]
        cdf: Option<PathBuf>,
        /// Trace every decided cell of affected destinations afterwards.
        #[arg(long)]
        trace_affected: bool,
        /// Cells per log batch.
        #[arg(long, default_value_t = 512)]
        batch: usize,
        /// Run cells in a seeded random order.
        #[arg(long)]
        shuffle: bool,
        #[arg(long, default_value_t = 3)]
        repetitions: u32,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },

    /// Trace one flow and print its hops.
    Trace {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        dest: Ipv4Address,
        #[arg(long)]
        src_ip: Ipv4Address,
        #[arg(long)]
        src_port: u16,
        #[arg(long, default_value = "https")]
        protocol: AppProtocol,
        #[arg(long, default_value = "example.com")]
        domain: String,
        #[arg(long, default_value_t = flowstable_core::tracer::DEFAULT_MAX_TTL)]
        max_ttl: u8,
    },

    /// Censored and clear route graphs of one destination from a run log.
    Graph {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        dest: Ipv4Address,
        #[arg(long, default_value = "https")]
        protocol: AppProtocol,
        /// Writes <out>.nodes.csv and <out>.edges.csv.
        #[arg(long)]
        out: PathBuf,
        /// Adds address, AS and location columns.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },

    /// Effect type of every affected, traced destination in a run log.
    Classify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// Standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },

    /// Censored cells per source-parameter group, most first.
    Bits {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "src-ip-low3")]
        group_by: GroupBy,
        /// Restrict to one protocol.
        #[arg(long)]
        protocol: Option<AppProtocol>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Transport(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Transport(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(cli.command, cli.transport) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("usage error: {m}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Transport(m) => eprintln!("transport error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
