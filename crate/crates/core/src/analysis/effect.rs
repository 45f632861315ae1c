//! Why do censored and clear routes to one destination differ?
//!
//! The checks run from the least to the most path-attributable explanation
//! and the first match wins: identical paths, clear routes that skip the
//! censoring AS, same-AS routes through different places, and finally a
//! censor that only some routes cross.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::addr::{Ipv4Address, Subnet24};
use crate::analysis::{AnalysisError, DualGraph, NodeColor};
use crate::simnet::{NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub asn: u32,
    pub subnet24: Subnet24,
    pub geo: String,
}

/// Per-node AS, subnet and location labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations(pub BTreeMap<NodeId, NodeAnnotation>);

impl Annotations {
    pub fn from_topology(topology: &Topology) -> Self {
        Self(
            topology
                .nodes()
                .map(|n| (n.id, NodeAnnotation { asn: n.asn, subnet24: n.subnet24, geo: n.geo.clone() }))
                .collect(),
        )
    }

    pub fn get(&self, node: NodeId) -> Result<&NodeAnnotation, AnalysisError> {
        self.0.get(&node).ok_or(AnalysisError::AnnotationMissing(node))
    }

    fn asns(&self, nodes: impl IntoIterator<Item = NodeId>) -> Result<BTreeSet<u32>, AnalysisError> {
        nodes.into_iter().map(|n| self.get(n).map(|a| a.asn)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Some routes cross a censor that the others miss.
    Type1FailedNode(Scope),
    /// Both outcomes cross the same AS, but through different locations.
    Type2GeoDiverse,
    /// Clear routes never enter the censoring AS.
    Type3RouteAround,
    /// Nothing in the observable paths tells the outcomes apart.
    Type4Unattributable,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Type1FailedNode(Scope::Intra) => "type1_intra",
            Effect::Type1FailedNode(Scope::Inter) => "type1_inter",
            Effect::Type2GeoDiverse => "type2_geo_diverse",
            Effect::Type3RouteAround => "type3_route_around",
            Effect::Type4Unattributable => "type4_unattributable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Effect::Type1FailedNode(Scope::Intra),
            Effect::Type1FailedNode(Scope::Inter),
            Effect::Type2GeoDiverse,
            Effect::Type3RouteAround,
            Effect::Type4Unattributable,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub divergence: Option<NodeId>,
    /// ASes believed to host the censor.
    pub region: BTreeSet<u32>,
    pub censored_asns: BTreeSet<u32>,
    pub clear_asns: BTreeSet<u32>,
    /// Locations of censored-only and clear-only nodes in the shared AS.
    pub censored_geo: BTreeSet<String>,
    pub clear_geo: BTreeSet<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectReport {
    pub destination: Ipv4Address,
    pub effect: Effect,
    pub evidence: Evidence,
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn classify_effect(dual: &DualGraph, annotations: &Annotations) -> Result<EffectReport, AnalysisError> {
    let censored_asns = annotations.asns(dual.censored.nodes.iter().copied())?;
    let clear_asns = annotations.asns(dual.clear.nodes.iter().copied())?;
    let region = if dual.censor_nodes.is_empty() {
        annotations.asns(dual.censored_routes.iter().filter_map(|r| dual.divergence(r)).map(|(_, n)| n))?
    } else {
        annotations.asns(dual.censor_nodes.iter().copied())?
    };
    let mut evidence = Evidence {
        region: region.clone(),
        censored_asns: censored_asns.clone(),
        clear_asns: clear_asns.clone(),
        ..Evidence::default()
    };
    let report = |effect, evidence| Ok(EffectReport { destination: dual.destination, effect, evidence });

    if dual.censored_paths == dual.clear_paths {
        evidence.notes.push(format!("censored and clear groups share {} identical path(s)", dual.clear_paths.len()));
        return report(Effect::Type4Unattributable, evidence);
    }

    if !region.is_empty() && region.is_disjoint(&clear_asns) {
        evidence.notes.push(format!("clear routes cross AS {} and avoid AS {}", join(&clear_asns), join(&region)));
        return report(Effect::Type3RouteAround, evidence);
    }

    let exclusive = |color| -> Result<BTreeMap<u32, Vec<&NodeAnnotation>>, AnalysisError> {
        let mut by_as: BTreeMap<u32, Vec<&NodeAnnotation>> = BTreeMap::new();
        for n in dual.with_color(color) {
            let a = annotations.get(n)?;
            by_as.entry(a.asn).or_default().push(a);
        }
        Ok(by_as)
    };
    let only_censored = exclusive(NodeColor::OnlyCensored)?;
    let only_clear = exclusive(NodeColor::OnlyClear)?;
    for (asn, c_nodes) in &only_censored {
        let Some(k_nodes) = only_clear.get(asn) else { continue };
        let c_geo: BTreeSet<String> = c_nodes.iter().map(|a| a.geo.clone()).collect();
        let k_geo: BTreeSet<String> = k_nodes.iter().map(|a| a.geo.clone()).collect();
        if c_geo.is_disjoint(&k_geo) {
            let c_nets: BTreeSet<_> = c_nodes.iter().map(|a| a.subnet24).collect();
            let k_nets: BTreeSet<_> = k_nodes.iter().map(|a| a.subnet24).collect();
            evidence.notes.push(format!(
                "AS {asn}: censored routes via {} ({}), clear routes via {} ({})",
                join(&c_geo),
                join(&c_nets),
                join(&k_geo),
                join(&k_nets)
            ));
            evidence.censored_geo = c_geo;
            evidence.clear_geo = k_geo;
            return report(Effect::Type2GeoDiverse, evidence);
        }
    }

    let divergence = dual.censored_routes.iter().find_map(|r| dual.divergence(r));
    let scope = match divergence {
        Some((Some(at), next)) => {
            evidence.divergence = Some(at);
            let asn = annotations.get(at)?.asn;
            evidence.notes.push(format!("routes split at node {at} (AS {asn}); censored branch enters node {next}"));
            if region.contains(&asn) {
                Scope::Intra
            } else {
                Scope::Inter
            }
        }
        _ => {
            evidence.notes.push("censored and clear routes share no leading hop".into());
            Scope::Inter
        }
    };
    report(Effect::Type1FailedNode(scope), evidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::SourceParams;
    use crate::analysis::{build_dual_graph, PathGroup, PathSet};
    use crate::verdict::{Mechanism, Verdict};

    const C: Verdict = Verdict::Censored(Mechanism::RstInjection);
    const N: Verdict = Verdict::NotCensored;

    fn ann(spec: &[(u32, u32, &str)]) -> Annotations {
        Annotations(
            spec.iter()
                .map(|&(n, asn, geo)| {
                    let subnet = format!("10.{}.{}.0/24", asn % 256, n).parse().unwrap();
                    (NodeId(n), NodeAnnotation { asn, subnet24: subnet, geo: geo.into() })
                })
                .collect(),
        )
    }

    fn dual(groups: &[(&[Option<u32>], Verdict)], gt: &[u32]) -> DualGraph {
        let mut ps = PathSet { destination: Ipv4Address::new(203, 0, 113, 1), groups: BTreeMap::new() };
        for (i, (route, v)) in groups.iter().enumerate() {
            let mut g = PathGroup::default();
            g.add_route(&route.iter().map(|n| n.map(NodeId)).collect::<Vec<_>>());
            g.verdict = Some(*v);
            ps.groups.insert(SourceParams::new(Ipv4Address::new(198, 51, 100, 1), i as u16), g);
        }
        build_dual_graph(&ps, &gt.iter().map(|&n| NodeId(n)).collect()).unwrap()
    }

    #[test]
    fn identical_paths_are_unattributable() {
        let a = ann(&[(1, 10, "X"), (2, 20, "Y"), (3, 30, "Z")]);
        let d = dual(&[(&[Some(1), None, Some(3)], C), (&[Some(1), None, Some(3)], N)], &[2]);
        assert_eq!(classify_effect(&d, &a).unwrap().effect, Effect::Type4Unattributable);
    }

    #[test]
    fn clear_routes_skipping_the_censor_as() {
        let a = ann(&[(1, 10, "X"), (2, 20, "Y"), (3, 30, "Z")]);
        let d = dual(&[(&[Some(1), Some(2)], C), (&[Some(1), Some(3)], N)], &[2]);
        let r = classify_effect(&d, &a).unwrap();
        assert_eq!(r.effect, Effect::Type3RouteAround);
        assert_eq!(r.evidence.region, BTreeSet::from([20]));
    }

    #[test]
    fn same_as_different_cities() {
        let a = ann(&[(1, 10, "X"), (2, 20, "Mumbai"), (3, 20, "Chennai"), (4, 20, "Delhi")]);
        let d = dual(&[(&[Some(1), Some(2), Some(4)], C), (&[Some(1), Some(3), Some(4)], N)], &[2]);
        let r = classify_effect(&d, &a).unwrap();
        assert_eq!(r.effect, Effect::Type2GeoDiverse);
        assert_eq!(r.evidence.censored_geo, BTreeSet::from(["Mumbai".to_string()]));
        assert_eq!(r.evidence.clear_geo, BTreeSet::from(["Chennai".to_string()]));
    }

    #[test]
    fn failed_node_scope() {
        // split inside AS 20, which hosts the censor
        let a = ann(&[(1, 20, "X"), (2, 20, "X"), (3, 20, "X"), (4, 30, "Y")]);
        let d = dual(&[(&[Some(1), Some(2), Some(4)], C), (&[Some(1), Some(3), Some(4)], N)], &[2]);
        let r = classify_effect(&d, &a).unwrap();
        assert_eq!(r.effect, Effect::Type1FailedNode(Scope::Intra));
        assert_eq!(r.evidence.divergence, Some(NodeId(1)));
        // split upstream in AS 10
        let a = ann(&[(1, 10, "X"), (2, 20, "X"), (3, 20, "X"), (4, 30, "Y")]);
        let r = classify_effect(&d, &a).unwrap();
        assert_eq!(r.effect, Effect::Type1FailedNode(Scope::Inter));
    }

    #[test]
    fn inferred_region_without_ground_truth() {
        let a = ann(&[(1, 10, "X"), (2, 20, "Y"), (3, 30, "Z")]);
        let d = dual(&[(&[Some(1), Some(2)], C), (&[Some(1), Some(3)], N)], &[]);
        let r = classify_effect(&d, &a).unwrap();
        assert_eq!(r.evidence.region, BTreeSet::from([20]));
        assert_eq!(r.effect, Effect::Type3RouteAround);
    }

    #[test]
    fn missing_annotation() {
        let a = ann(&[(1, 10, "X"), (2, 20, "Y")]);
        let d = dual(&[(&[Some(1), Some(2)], C), (&[Some(1), Some(3)], N)], &[]);
        assert_eq!(classify_effect(&d, &a), Err(AnalysisError::AnnotationMissing(NodeId(3))));
    }

    #[test]
    fn effect_names_parse() {
        for e in [Effect::Type1FailedNode(Scope::Intra), Effect::Type2GeoDiverse, Effect::Type4Unattributable] {
            assert_eq!(Effect::parse(e.as_str()), Some(e));
        }
    }
}
