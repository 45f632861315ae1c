use std::collections::BTreeSet;
use std::path::Path;

use flowstable_core::experiments::{
    default_source_prefix, plan_rq1, plan_rq2, run_rq1, run_rq1_logged, run_rq2_logged, Rq1Options, Rq2Options,
    Variation,
};
use flowstable_core::prober::{ProbeSpec, SessionSource, SimBackend, Transport};
use flowstable_core::runlog::{read_log, RunData, RunLog};
use flowstable_core::scenarios::{bit_pattern, domains, random_layered, registry, single_field_hash, RandomParams};
use flowstable_core::simnet::oracle_path;
use flowstable_core::tracer::{trace, Terminal};
use flowstable_core::{AppProtocol, FlowField, Ipv4Address, Sensitivity, SourceParams, Topology};

fn paths_per_variation(t: &Topology, dst: Ipv4Address, seed: u64) -> Vec<(Variation, usize)> {
    let plans = plan_rq1(dst, AppProtocol::Https, seed);
    run_rq1(&plans, &SimBackend::new(t), &Rq1Options::default())
        .iter()
        .map(|r| (r.variation, r.num_paths().unwrap()))
        .collect()
}

#[test]
fn single_field_hashing_separates_ip_and_port_variation() {
    let (ip_t, ip_d) = single_field_hash(FlowField::SrcIp, 1);
    let (port_t, port_d) = single_field_hash(FlowField::SrcPort, 2);
    for seed in 0..3 {
        let ip = paths_per_variation(&ip_t, ip_d, seed);
        assert_eq!(ip[0], (Variation::AllConstant, 1));
        assert_eq!(ip[1], (Variation::VaryPort, 1));
        assert!(ip[2].1 > 1);
        let port = paths_per_variation(&port_t, port_d, seed);
        assert_eq!(port[2], (Variation::VaryIp, 1));
        assert!(port[1].1 > 1);
    }
}

#[test]
fn vary_ip_reaches_all_eight_low_bit_branches() {
    let (t, d) = bit_pattern(&[], 3);
    let r = paths_per_variation(&t, d, 9);
    assert_eq!(r[2], (Variation::VaryIp, 8));
}

#[test]
fn session_reuse_gives_the_same_paths() {
    let (t, d) = single_field_hash(FlowField::SrcIp, 1);
    let plans = plan_rq1(d, AppProtocol::Https, 5);
    let fresh = run_rq1(&plans, &SimBackend::new(&t), &Rq1Options::default());
    let reused = run_rq1(&plans, &SimBackend::new(&t), &Rq1Options { reuse_session: true, ..Rq1Options::default() });
    for (a, b) in fresh.iter().zip(&reused) {
        assert_eq!(a.num_paths(), b.num_paths());
    }
}

#[test]
fn traces_match_the_oracle_on_random_topologies() {
    for seed in 0..100 {
        let s = random_layered(seed, &RandomParams::default());
        let backend = SimBackend::new(&s.topology);
        for &(_, dst) in &s.destinations {
            let src = SourceParams::new(Ipv4Address::new(198, 51, 100, (seed % 250) as u8 + 1), 40000 + seed as u16);
            let spec = ProbeSpec::new(AppProtocol::Https, dst, "example.com", Sensitivity::Control, src);
            let mut session = backend.open(seed);
            session.advance(1);
            let tr = trace(&spec, 32, &mut session).unwrap();
            assert_eq!(tr.terminal, Terminal::ReachedDestination);
            let oracle = oracle_path(&s.topology, &spec.flow(), 1).unwrap();
            let routers = &oracle[..oracle.len() - 1];
            assert_eq!(tr.hops.len(), routers.len(), "seed {seed}");
            for (hop, node) in tr.hops.iter().zip(routers) {
                let responsive = s.topology.node(*node).unwrap().responsive;
                assert_eq!(*hop, responsive.then_some(*node), "seed {seed}");
            }
        }
    }
}

fn lines(path: &Path) -> BTreeSet<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn rq2_resumes_after_a_crash() {
    let (t, d) = bit_pattern(&[1, 6], 2);
    let plan = plan_rq2(&[d], &[AppProtocol::Https], domains(), 3, default_source_prefix()).unwrap();
    let backend = SimBackend::new(&t);
    let opts = Rq2Options { batch: 100, trace_affected: true, ..Rq2Options::default() };
    let dir = tempfile::tempdir().unwrap();

    let full = dir.path().join("full.jsonl");
    let mut log = RunLog::open(&full).unwrap();
    run_rq2_logged(&plan, &backend, &registry(), &opts, "r", &RunData::default(), &mut log).unwrap();
    drop(log);

    // Keep 40% of the log and half of the next line.
    let text = std::fs::read_to_string(&full).unwrap();
    let all: Vec<&str> = text.lines().collect();
    let keep = all.len() * 2 / 5;
    let mut cut = all[..keep].join("\n") + "\n";
    cut.push_str(&all[keep][..all[keep].len() / 2]);
    let partial = dir.path().join("partial.jsonl");
    std::fs::write(&partial, cut).unwrap();

    let contents = read_log(&partial).unwrap();
    assert_eq!(contents.warnings.len(), 1);
    let data = RunData::from_records(&contents.records, Some("r")).unwrap();
    let mut log = RunLog::open(&partial).unwrap();
    let stats = run_rq2_logged(&plan, &backend, &registry(), &opts, "r", &data, &mut log).unwrap();
    assert!(stats.skipped > 0 && stats.executed > 0);
    drop(log);

    assert_eq!(lines(&partial), lines(&full));
    let a = RunData::from_records(&read_log(&full).unwrap().records, None).unwrap();
    let b = RunData::from_records(&read_log(&partial).unwrap().records, None).unwrap();
    assert_eq!(a.verdicts, b.verdicts);
    assert_eq!(a.traces, b.traces);
}

#[test]
fn rq1_resume_skips_logged_samples() {
    let (t, d) = single_field_hash(FlowField::SrcIp, 1);
    let plans = plan_rq1(d, AppProtocol::Https, 5);
    let backend = SimBackend::new(&t);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rq1.jsonl");
    let mut log = RunLog::open(&path).unwrap();
    let first =
        run_rq1_logged(&plans[..2], &backend, &Rq1Options::default(), "q", &RunData::default(), &mut log).unwrap();
    assert_eq!(first.executed, 288);
    let data = RunData::from_records(&read_log(&path).unwrap().records, None).unwrap();
    let second = run_rq1_logged(&plans, &backend, &Rq1Options::default(), "q", &data, &mut log).unwrap();
    assert_eq!((second.skipped, second.executed), (288, 288));
    let data = RunData::from_records(&read_log(&path).unwrap().records, None).unwrap();
    assert_eq!(data.traces.len(), 576);
}
