//! Seeded topology generators: random layered networks for property checks
//! and labelled fixture families for the effect classifier.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addr::{Ipv4Address, Subnet24};
use crate::analysis::{Effect, Scope};
use crate::censor::{CensorAction, CensorRule, DomainPattern, Health};
use crate::flow::{AppProtocol, FlowField};
use crate::prober::{BlockpageRegistry, DomainPair};
use crate::simnet::{Node, NodeId, PolicyDoc, RateDoc, Role, Selector, Topology, TopologyDoc};

pub const CONTROL_DOMAIN: &str = "example.com";
pub const SENSITIVE_DOMAIN: &str = "blocked.test";
pub const BLOCKPAGE_TAG: &str = "bp-generic";

pub fn domains() -> DomainPair {
    DomainPair::new(CONTROL_DOMAIN, SENSITIVE_DOMAIN)
}

pub fn registry() -> BlockpageRegistry {
    BlockpageRegistry::new().with(BLOCKPAGE_TAG, "generic filter page")
}

const GEOS: [&str; 8] = ["Mumbai", "Chennai", "Delhi", "Kolkata", "Frankfurt", "Amsterdam", "Singapore", "Tokyo"];
const FIELDS: [FlowField; 5] =
    [FlowField::SrcIp, FlowField::DstIp, FlowField::SrcPort, FlowField::DstPort, FlowField::Protocol];

/// Incremental topology document. Router addresses are unique by
/// construction: node n lives in 10.<asn byte>.<n>.0/24.
#[derive(Debug, Clone)]
pub struct Builder {
    doc: TopologyDoc,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Self {
            doc: TopologyDoc {
                nodes: Vec::new(),
                policies: Vec::new(),
                censors: Vec::new(),
                loss: Vec::new(),
                icmp_rate: Vec::new(),
                seed,
                entry: None,
            },
        }
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.doc.nodes.len() as u32 + 1)
    }

    pub fn router(&mut self, asn: u32, geo: &str, responsive: bool) -> NodeId {
        let id = self.next_id();
        self.doc.nodes.push(Node {
            id,
            role: Role::Router,
            asn,
            subnet24: Subnet24::of(Ipv4Address::new(10, (asn % 251) as u8, id.0 as u8, 0)),
            geo: geo.to_string(),
            responsive,
            addr: None,
        });
        id
    }

    /// Destination host at 203.0.113.<host>.
    pub fn endpoint(&mut self, asn: u32, geo: &str, host: u8) -> NodeId {
        let id = self.next_id();
        let addr = Ipv4Address::new(203, 0, 113, host);
        self.doc.nodes.push(Node {
            id,
            role: Role::Endpoint,
            asn,
            subnet24: Subnet24::of(addr),
            geo: geo.to_string(),
            responsive: true,
            addr: Some(addr),
        });
        id
    }

    pub fn policy(&mut self, node: NodeId, dst: Option<NodeId>, selector: Selector, next_hops: Vec<NodeId>) {
        self.doc.policies.push(PolicyDoc { node, dst, selector, next_hops });
    }

    /// Single next hop; the selector is irrelevant.
    pub fn link(&mut self, from: NodeId, to: NodeId) {
        self.policy(from, None, Selector::HashTuple { fields: FIELDS.to_vec() }, vec![to]);
    }

    pub fn chain(&mut self, path: &[NodeId]) {
        for w in path.windows(2) {
            self.link(w[0], w[1]);
        }
    }

    pub fn censor(&mut self, rule: CensorRule) {
        self.doc.censors.push(rule);
    }

    pub fn loss(&mut self, node: NodeId, p: f64) {
        self.doc.loss.push(RateDoc { node, p });
    }

    pub fn entry(&mut self, node: NodeId) {
        self.doc.entry = Some(node);
    }

    pub fn doc(&self) -> &TopologyDoc {
        &self.doc
    }

    pub fn build(self) -> Topology {
        Topology::from_doc(self.doc).expect("generated topologies are valid")
    }
}

/// Sensitive-domain rule for `protocol` at `node`.
pub fn rule(node: NodeId, protocol: AppProtocol, action: CensorAction) -> CensorRule {
    CensorRule::new(node, protocol, DomainPattern::Exact(SENSITIVE_DOMAIN.into()), action)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomParams {
    pub max_layers: usize,
    pub max_fanout: usize,
    /// Per-router loss is drawn uniformly from this range.
    pub loss: (f64, f64),
    pub unresponsive_rate: f64,
    pub max_endpoints: usize,
    /// Chance that a router carries a destination-specific override.
    pub per_dst_rate: f64,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            max_layers: 8,
            max_fanout: 4,
            loss: (0.0, 0.0),
            unresponsive_rate: 0.2,
            max_endpoints: 3,
            per_dst_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomScenario {
    pub topology: Topology,
    pub destinations: Vec<(NodeId, Ipv4Address)>,
}

fn random_selector(rng: &mut ChaCha8Rng) -> Selector {
    if rng.random_bool(0.5) {
        Selector::LowBits { field: *FIELDS[..4].choose(rng).expect("non-empty"), n_bits: rng.random_range(1..=3) }
    } else {
        let mut fields: Vec<FlowField> = FIELDS.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if fields.is_empty() {
            fields.push(FlowField::SrcIp);
        }
        Selector::HashTuple { fields }
    }
}

/// Layered network: one entry router, up to `max_layers` layers of at most
/// `max_fanout` routers each, every router linked to 1..=fanout routers of
/// the next layer, and 1..=`max_endpoints` destinations behind the last
/// layer. At most 8 * 4 + 1 + 3 = 36 nodes with the defaults.
pub fn random_layered(seed: u64, params: &RandomParams) -> RandomScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(seed);
    let layers = rng.random_range(1..=params.max_layers.max(1));
    let mut grid: Vec<Vec<NodeId>> = Vec::new();
    for l in 0..=layers {
        let width = if l == 0 { 1 } else { rng.random_range(1..=params.max_fanout.max(1)) };
        let asn = 64500 + (l as u32) / 2;
        let row = (0..width)
            .map(|_| {
                let responsive = !rng.random_bool(params.unresponsive_rate);
                b.router(asn, GEOS.choose(&mut rng).expect("non-empty"), responsive)
            })
            .collect();
        grid.push(row);
    }
    let n_endpoints = rng.random_range(1..=params.max_endpoints.max(1));
    let endpoints: Vec<NodeId> = (0..n_endpoints).map(|k| b.endpoint(64999, "Dest", 10 + k as u8)).collect();

    let pick = |rng: &mut ChaCha8Rng, pool: &[NodeId]| {
        let k = rng.random_range(1..=pool.len().min(params.max_fanout.max(1)));
        let mut hops: Vec<NodeId> = pool.choose_multiple(rng, k).copied().collect();
        hops.shuffle(rng);
        hops
    };
    for l in 0..grid.len() {
        for &node in &grid[l] {
            if l + 1 < grid.len() {
                let next = &grid[l + 1];
                let hops = pick(&mut rng, next);
                let selector = random_selector(&mut rng);
                b.policy(node, None, selector, hops);
                for &e in &endpoints {
                    if rng.random_bool(params.per_dst_rate) {
                        let hops = pick(&mut rng, next);
                        let selector = random_selector(&mut rng);
                        b.policy(node, Some(e), selector, hops);
                    }
                }
            } else {
                for &e in &endpoints {
                    b.policy(node, Some(e), Selector::HashTuple { fields: vec![FlowField::SrcIp] }, vec![e]);
                }
            }
            let (lo, hi) = params.loss;
            if hi > 0.0 {
                let p = rng.random_range(lo..=hi);
                b.loss(node, p);
            }
        }
    }
    b.entry(grid[0][0]);
    let topology = b.build();
    let destinations = endpoints.iter().map(|&e| (e, topology.node(e).expect("endpoint exists").address())).collect();
    RandomScenario { topology, destinations }
}

/// The five labelled effect families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectFamily {
    Type1Intra,
    Type1Inter,
    Type2Geo,
    Type3RouteAround,
    Type4Unattributable,
}

impl EffectFamily {
    pub const ALL: [EffectFamily; 5] = [
        EffectFamily::Type1Intra,
        EffectFamily::Type1Inter,
        EffectFamily::Type2Geo,
        EffectFamily::Type3RouteAround,
        EffectFamily::Type4Unattributable,
    ];

    pub fn label(self) -> Effect {
        match self {
            EffectFamily::Type1Intra => Effect::Type1FailedNode(Scope::Intra),
            EffectFamily::Type1Inter => Effect::Type1FailedNode(Scope::Inter),
            EffectFamily::Type2Geo => Effect::Type2GeoDiverse,
            EffectFamily::Type3RouteAround => Effect::Type3RouteAround,
            EffectFamily::Type4Unattributable => Effect::Type4Unattributable,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectFamily::Type1Intra => "type1_intra",
            EffectFamily::Type1Inter => "type1_inter",
            EffectFamily::Type2Geo => "type2_geo",
            EffectFamily::Type3RouteAround => "type3_routearound",
            EffectFamily::Type4Unattributable => "type4_unattributable",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EffectFixture {
    pub family: EffectFamily,
    pub topology: Topology,
    pub destination: Ipv4Address,
    pub protocol: AppProtocol,
}

/// One randomized instance of `family`. Two branches leave a split router,
/// chosen by one low bit of the source address or port; one branch censors
/// the sensitive domain and the other does not. What differs per family is
/// where the split sits and how the branches are annotated.
pub fn effect_fixture(family: EffectFamily, seed: u64) -> EffectFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ family as u64);
    let mut b = Builder::new(seed);
    let mut asns: Vec<u32> = (0..40).map(|i| 64600 + i * 7).collect();
    asns.shuffle(&mut rng);
    let (upstream, censor_as, transit_as, dest_as) = (asns[0], asns[1], asns[2], asns[3]);
    let mut geos = GEOS.to_vec();
    geos.shuffle(&mut rng);
    let (home, away) = (geos[0], geos[1]);

    let (protocol, action) = match rng.random_range(0..3) {
        0 => (AppProtocol::Https, CensorAction::InjectRst),
        1 => (AppProtocol::Http, CensorAction::DropSilently),
        _ => (AppProtocol::Http, CensorAction::InjectBlockpage { tag: BLOCKPAGE_TAG.into() }),
    };

    // Upstream routers, then for the intra case a few routers inside the
    // censoring AS before the split.
    let mut prefix: Vec<NodeId> = (0..rng.random_range(1..=2)).map(|_| b.router(upstream, "Upstream", true)).collect();
    if family == EffectFamily::Type1Intra {
        for _ in 0..rng.random_range(1..=2) {
            prefix.push(b.router(censor_as, home, true));
        }
    }
    let split = *prefix.last().expect("prefix is non-empty");
    b.chain(&prefix);

    let branch_len = |rng: &mut ChaCha8Rng| rng.random_range(1..=2);
    let silent = family == EffectFamily::Type4Unattributable;
    let (clear_as, clear_geo) = match family {
        EffectFamily::Type2Geo => (censor_as, away),
        EffectFamily::Type3RouteAround => (transit_as, away),
        _ => (censor_as, home),
    };
    let censored: Vec<NodeId> = (0..branch_len(&mut rng)).map(|_| b.router(censor_as, home, !silent)).collect();
    let clear: Vec<NodeId> = (0..branch_len(&mut rng)).map(|_| b.router(clear_as, clear_geo, !silent)).collect();
    b.chain(&censored);
    b.chain(&clear);

    let tail: Vec<NodeId> = (0..rng.random_range(0..=2)).map(|_| b.router(dest_as, "Edge", true)).collect();
    let host = rng.random_range(2..=250);
    let dst = b.endpoint(dest_as, "Edge", host);
    let mut rest = tail.clone();
    rest.push(dst);
    b.chain(&rest);
    b.link(*censored.last().expect("non-empty"), rest[0]);
    b.link(*clear.last().expect("non-empty"), rest[0]);

    let field = if rng.random_bool(0.5) { FlowField::SrcIp } else { FlowField::SrcPort };
    let mut branches = [censored[0], clear[0]];
    branches.shuffle(&mut rng);
    b.policy(split, None, Selector::LowBits { field, n_bits: 1 }, branches.to_vec());

    let at = censored[rng.random_range(0..censored.len())];
    b.censor(rule(at, protocol, action.clone()));
    if matches!(family, EffectFamily::Type1Intra | EffectFamily::Type1Inter) {
        let mut failed = rule(clear[rng.random_range(0..clear.len())], protocol, action);
        failed.health = Health::Failed;
        b.censor(failed);
    }
    b.entry(prefix[0]);
    let topology = b.build();
    let destination = topology.node(dst).expect("endpoint exists").address();
    EffectFixture { family, topology, destination, protocol }
}

/// Entry -> split by LowBits(SrcIp, 3) into 8 branches -> destination,
/// with the sensitive domain RST-censored on branches whose index is in
/// `censored`.
pub fn bit_pattern(censored: &[usize], seed: u64) -> (Topology, Ipv4Address) {
    let mut b = Builder::new(seed);
    let entry = b.router(64500, "Core", true);
    let branches: Vec<NodeId> = (0..8).map(|_| b.router(64501, "Core", true)).collect();
    let dst = b.endpoint(64502, "Edge", 8);
    b.policy(entry, None, Selector::LowBits { field: FlowField::SrcIp, n_bits: 3 }, branches.clone());
    for (i, &n) in branches.iter().enumerate() {
        b.link(n, dst);
        if censored.contains(&i) {
            b.censor(rule(n, AppProtocol::Https, CensorAction::InjectRst));
        }
    }
    b.entry(entry);
    let t = b.build();
    let addr = t.node(dst).expect("endpoint exists").address();
    (t, addr)
}

/// Two stages of three-way hashing on one flow field only.
pub fn single_field_hash(field: FlowField, seed: u64) -> (Topology, Ipv4Address) {
    let mut b = Builder::new(seed);
    let entry = b.router(64500, "Core", true);
    let first: Vec<NodeId> = (0..3).map(|_| b.router(64501, "Core", true)).collect();
    let second: Vec<NodeId> = (0..3).map(|_| b.router(64502, "Core", true)).collect();
    let dst = b.endpoint(64503, "Edge", 9);
    b.policy(entry, None, Selector::HashTuple { fields: vec![field] }, first.clone());
    for &n in &first {
        b.policy(n, None, Selector::HashTuple { fields: vec![field, FlowField::DstIp] }, second.clone());
    }
    for &n in &second {
        b.link(n, dst);
    }
    b.entry(entry);
    let t = b.build();
    let addr = t.node(dst).expect("endpoint exists").address();
    (t, addr)
}

/// One entry of a fixture directory's `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub name: String,
    pub file: String,
    pub destination: Ipv4Address,
    pub protocol: AppProtocol,
    pub purpose: String,
    /// Expected classification, for effect fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<String>,
}

pub fn load_manifest(dir: &std::path::Path) -> std::io::Result<Vec<FixtureEntry>> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

/// Fixtures produced by the generators above, in manifest order.
pub fn generated_fixtures() -> Vec<(FixtureEntry, Topology)> {
    let entry = |name: &str, destination, protocol, purpose: &str, effect: Option<Effect>| FixtureEntry {
        name: name.into(),
        file: format!("{name}.topo"),
        destination,
        protocol,
        purpose: purpose.into(),
        effect: effect.map(|e| e.as_str().into()),
    };
    let mut out = Vec::new();
    let (t, d) = bit_pattern(&[0, 3, 5], 11);
    out.push((
        entry("bits_3of8", d, AppProtocol::Https, "low 3 source-address bits pick 1 of 8 branches; 3 censor", None),
        t,
    ));
    let (t, d) = single_field_hash(FlowField::SrcIp, 21);
    out.push((entry("srcip_hash", d, AppProtocol::Https, "two 3-way stages hashing the source address only", None), t));
    let (t, d) = single_field_hash(FlowField::SrcPort, 22);
    out.push((entry("srcport_hash", d, AppProtocol::Https, "two 3-way stages hashing the source port only", None), t));
    for family in EffectFamily::ALL {
        let fx = effect_fixture(family, 0);
        let purpose = format!("labelled instance of the {} effect family", family.name());
        out.push((entry(family.name(), fx.destination, fx.protocol, &purpose, Some(family.label())), fx.topology));
    }
    out
}
