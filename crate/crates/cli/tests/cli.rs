use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name).to_str().unwrap().to_string()
}

fn flowstable(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowstable")).args(args).env_remove("FLOWSTABLE_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_every_shipped_fixture() {
    for f in ["minimal.topo", "three_hop.topo", "half_split.topo", "bits_3of8.topo", "type4_unattributable.topo"] {
        let o = flowstable(&["validate", &fixture(f)]);
        assert_eq!(o.status.code(), Some(0), "{f}");
        assert!(stdout(&o).starts_with("ok:"));
    }
}

#[test]
fn validate_rejects_bad_documents() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.topo");
    std::fs::write(&bad, r#"{"nodes": [], "policies": [], "seed": 1, "surprise": true}"#).unwrap();
    assert_eq!(flowstable(&["validate", &bad]).status.code(), Some(2));
    assert_eq!(flowstable(&["validate", &path(dir.path(), "missing.topo")]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(flowstable(&[]).status.code(), Some(1));
    assert_eq!(flowstable(&["trace", "--topology", "x"]).status.code(), Some(1));
    assert_eq!(flowstable(&["bits", "--log", "x", "--group-by", "nibbles"]).status.code(), Some(1));
    assert_eq!(flowstable(&["--help"]).status.code(), Some(0));
}

#[test]
fn trace_prints_three_hops_then_reached() {
    let o = flowstable(&[
        "trace",
        "--topology",
        &fixture("three_hop.topo"),
        "--dest",
        "203.0.113.4",
        "--src-ip",
        "198.51.100.7",
        "--src-port",
        "40000",
        "--protocol",
        "http",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1\t1\t10.0.1.2\n2\t2\t10.0.2.3\n3\t3\t10.0.3.4\nreached\n");
}

#[test]
fn trace_rejects_ttl_zero_and_unknown_destinations() {
    let topo = fixture("three_hop.topo");
    let base = ["trace", "--topology", &topo, "--src-ip", "198.51.100.7", "--src-port", "40000"];
    let mut args = base.to_vec();
    args.extend(["--dest", "203.0.113.4", "--max-ttl", "0"]);
    assert_eq!(flowstable(&args).status.code(), Some(1));
    let mut args = base.to_vec();
    args.extend(["--dest", "192.0.2.1"]);
    assert_eq!(flowstable(&args).status.code(), Some(2));
}

#[test]
fn live_transport_is_a_transport_error() {
    let o = flowstable(&[
        "--transport",
        "live",
        "trace",
        "--topology",
        &fixture("three_hop.topo"),
        "--dest",
        "203.0.113.4",
        "--src-ip",
        "198.51.100.7",
        "--src-port",
        "40000",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

fn rq2(dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let dests = path(dir, "dests.json");
    std::fs::write(&dests, r#"[{"addr": "203.0.113.4", "asn": 64501}]"#).unwrap();
    let log = dir.join("run.jsonl");
    let topo = fixture("half_split.topo");
    let log_s = log.to_str().unwrap().to_string();
    let mut args = vec!["rq2", "--topology", &topo, "--dests", &dests, "--out", &log_s];
    args.extend(extra);
    (flowstable(&args), log)
}

#[test]
fn rq2_reports_half_split_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (o, log) = rq2(dir.path(), &["--seed", "2", "--trace-affected"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(log.with_extension("affected.csv")).unwrap();
    assert_eq!(
        table,
        "destination,asn,protocol,affected,decided_cells,no_censorship\n203.0.113.4,64501,https,true,1664,0.5000\n"
    );
    let cdf = std::fs::read_to_string(log.with_extension("cdf.csv")).unwrap();
    assert_eq!(cdf, "protocol,fraction,cdf\nhttps,0.5000,1.0000\n");

    let (again, _) = rq2(dir.path(), &["--seed", "2", "--trace-affected"]);
    assert!(stdout(&again).starts_with("0 measurements run, 1664 cells already logged"), "{}", stdout(&again));

    let bits = flowstable(&["bits", "--log", log.to_str().unwrap(), "--group-by", "src-ip-low3"]);
    let rows: Vec<String> = stdout(&bits).lines().map(String::from).collect();
    assert_eq!(rows[0], "group,affected_destinations,censored_cells");
    assert_eq!(rows.len(), 9);
    assert!(rows[1..5].iter().all(|r| r.ends_with(",1,208")));
    assert!(rows[5..].iter().all(|r| r.ends_with(",0,0")));

    let prefix = path(dir.path(), "g");
    let g = flowstable(&[
        "graph",
        "--log",
        log.to_str().unwrap(),
        "--dest",
        "203.0.113.4",
        "--out",
        &prefix,
        "--topology",
        &fixture("half_split.topo"),
    ]);
    assert_eq!(g.status.code(), Some(0), "{}", String::from_utf8_lossy(&g.stderr));
    let nodes = std::fs::read_to_string(format!("{prefix}.nodes.csv")).unwrap();
    assert!(nodes.contains("3,10.0.3.4,64500,Core,only_censored"));
    assert!(nodes.contains("2,10.0.2.3,64500,Core,only_clear"));
    let edges = std::fs::read_to_string(format!("{prefix}.edges.csv")).unwrap();
    assert!(edges.contains("1,3,censored,true"));
}

#[test]
fn seed_flag_beats_environment() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let dir = tempfile::tempdir().unwrap();
        let plan = path(dir.path(), "plan.json");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowstable"));
        cmd.args(["rq1", "--topology", &fixture("minimal.topo"), "--dest", "203.0.113.2", "--plan-out", &plan]);
        cmd.args(["--out", &path(dir.path(), "log.jsonl")]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        cmd.env_remove("FLOWSTABLE_SEED");
        if let Some(s) = env {
            cmd.env("FLOWSTABLE_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(plan).unwrap()
    };
    let env7 = run(Some("7"), None);
    assert_eq!(env7, run(None, Some("7")));
    assert_ne!(env7, run(None, Some("8")));
    assert_eq!(run(Some("7"), Some("8")), run(None, Some("8")));
}

#[test]
fn rq1_plan_round_trip_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = path(dir.path(), "plan.json");
    let log = path(dir.path(), "log.jsonl");
    let topo = fixture("srcport_hash.topo");
    let base = ["rq1", "--topology", &topo, "--out", &log];
    let mut first = base.to_vec();
    first.extend(["--dest", "203.0.113.9", "--seed", "3", "--plan-out", &plan]);
    let a = flowstable(&first);
    assert_eq!(a.status.code(), Some(0));
    let mut second = base.to_vec();
    second.extend(["--plan", &plan]);
    let b = flowstable(&second);
    assert_eq!(stdout(&a), stdout(&b));
    let report = stdout(&a);
    assert!(report.starts_with("variation,num_paths,count\nall-constant,1,1\n"), "{report}");
    assert!(report.contains("vary-ip,1,1\n"));
}

#[test]
fn classify_needs_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (o, log) = rq2(dir.path(), &["--seed", "1"]);
    assert!(o.status.success());
    let c = flowstable(&["classify", "--log", log.to_str().unwrap(), "--topology", &fixture("half_split.topo")]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(stdout(&c).lines().count(), 1);
}
