use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flowstable_bench::{fixture, half_split_cell};
use flowstable_core::experiments::{default_source_prefix, plan_rq2, run_rq2};
use flowstable_core::prober::{probe_cell, ProbeConfig, ProbeSpec, SessionSource, SimBackend};
use flowstable_core::scenarios::{domains, registry};
use flowstable_core::simnet::{forward, next_hop, EcmpPolicy, ForwardState, Selector};
use flowstable_core::tracer::trace;
use flowstable_core::{fnv1a64, FlowField, FlowId, Sensitivity};

fn hashing(c: &mut Criterion) {
    let (dst, src, protocol) = half_split_cell();
    let flow = FlowId::new(src, dst, protocol.port(), protocol.transport());
    let bytes = flow.to_bytes();
    c.bench_function("fnv1a64/flow", |b| b.iter(|| fnv1a64(black_box(&bytes))));
    let policy = EcmpPolicy::new(
        Selector::HashTuple { fields: vec![FlowField::SrcIp, FlowField::SrcPort, FlowField::DstIp] },
        (1..=4).map(flowstable_core::NodeId).collect(),
    );
    c.bench_function("next_hop/hash_tuple", |b| b.iter(|| next_hop(black_box(&policy), black_box(&flow))));
}

fn forwarding(c: &mut Criterion) {
    let t = fixture("half_split.topo");
    let (dst, src, protocol) = half_split_cell();
    let spec = ProbeSpec::new(protocol, dst, "example.com", Sensitivity::Control, src);
    let packet = spec.payload_packet(64, 1);
    c.bench_function("forward/half_split", |b| {
        b.iter(|| {
            let mut state = ForwardState::for_topology(&t, 1);
            forward(&t, black_box(&packet), t.entry(), 1, &mut state).unwrap()
        })
    });
    let backend = SimBackend::new(&t);
    c.bench_function("trace/half_split", |b| {
        b.iter(|| {
            let mut session = backend.open(7);
            trace(black_box(&spec), 32, &mut session).unwrap()
        })
    });
}

fn measurement(c: &mut Criterion) {
    let t = fixture("half_split.topo");
    let backend = SimBackend::new(&t);
    let (dst, src, protocol) = half_split_cell();
    let config = ProbeConfig::default();
    let reg = registry();
    let pair = domains();
    c.bench_function("probe_cell/half_split", |b| {
        b.iter(|| probe_cell(dst, src, protocol, &pair, &backend, &config, &reg).unwrap())
    });
    let plan = plan_rq2(&[dst], &[protocol], domains(), 1, default_source_prefix()).unwrap();
    let mut group = c.benchmark_group("rq2");
    group.sample_size(10);
    group.bench_function("verdict_matrix/half_split", |b| b.iter(|| run_rq2(&plan, &backend, &config, &reg)));
    group.finish();
}

criterion_group!(benches, hashing, forwarding, measurement);
criterion_main!(benches);
