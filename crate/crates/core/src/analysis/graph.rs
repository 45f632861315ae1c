use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::addr::Ipv4Address;
use crate::analysis::{AnalysisError, PathSet};
use crate::simnet::NodeId;
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeColor {
    OnlyCensored,
    OnlyClear,
    Both,
}

impl NodeColor {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeColor::OnlyCensored => "only_censored",
            NodeColor::OnlyClear => "only_clear",
            NodeColor::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeEvidence {
    /// Edges into nodes where the simulator saw a censor fire.
    GroundTruth,
    /// Edges where censored routes leave the shared part of the graph.
    Inferred,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl Graph {
    fn add_route(&mut self, route: &[NodeId]) {
        self.nodes.extend(route);
        self.edges.extend(route.windows(2).map(|w| (w[0], w[1])));
    }
}

/// Routes of censored and clear groups side by side. Only groups with a
/// decided verdict take part; edges join consecutive answering hops, so
/// a silent hop is bridged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualGraph {
    pub destination: Ipv4Address,
    pub censored: Graph,
    pub clear: Graph,
    pub colors: BTreeMap<NodeId, NodeColor>,
    pub censor_edges: BTreeSet<(NodeId, NodeId)>,
    pub edge_evidence: EdgeEvidence,
    /// Nodes where a censor fired, whether or not they answer traceroute.
    pub censor_nodes: BTreeSet<NodeId>,
    pub censored_paths: BTreeSet<BTreeSet<NodeId>>,
    pub clear_paths: BTreeSet<BTreeSet<NodeId>>,
    /// Ordered answering hops of each censored group.
    pub censored_routes: Vec<Vec<NodeId>>,
}

impl DualGraph {
    pub fn color(&self, node: NodeId) -> Option<NodeColor> {
        self.colors.get(&node).copied()
    }

    pub fn universe(&self) -> BTreeSet<NodeId> {
        self.colors.keys().copied().collect()
    }

    pub fn with_color(&self, color: NodeColor) -> impl Iterator<Item = NodeId> + '_ {
        self.colors.iter().filter(move |(_, c)| **c == color).map(|(n, _)| *n)
    }

    /// Where a censored route leaves the shared part of the graph: the last
    /// node on both sides, if any, and the first censored-only node.
    pub fn divergence(&self, route: &[NodeId]) -> Option<(Option<NodeId>, NodeId)> {
        let i = route.iter().position(|n| self.color(*n) == Some(NodeColor::OnlyCensored))?;
        let before = i.checked_sub(1).map(|j| route[j]).filter(|n| self.color(*n) == Some(NodeColor::Both));
        Some((before, route[i]))
    }
}

/// Builds the censored and clear graphs of `pathset`. `censor_nodes` is the
/// simulator's ground truth; pass an empty set when there is none.
pub fn build_dual_graph(pathset: &PathSet, censor_nodes: &BTreeSet<NodeId>) -> Result<DualGraph, AnalysisError> {
    let mut censored = Graph::default();
    let mut clear = Graph::default();
    let mut censored_paths = BTreeSet::new();
    let mut clear_paths = BTreeSet::new();
    let mut censored_routes = Vec::new();
    for g in pathset.groups.values() {
        match g.verdict {
            Some(Verdict::Censored(_)) => {
                for r in &g.routes {
                    let route: Vec<NodeId> = r.iter().flatten().copied().collect();
                    censored.add_route(&route);
                    censored_routes.push(route);
                }
                censored_paths.insert(g.nodes.clone());
            }
            Some(Verdict::NotCensored) => {
                for r in &g.routes {
                    clear.add_route(&r.iter().flatten().copied().collect::<Vec<_>>());
                }
                clear_paths.insert(g.nodes.clone());
            }
            _ => {}
        }
    }
    if censored_paths.is_empty() || clear_paths.is_empty() {
        return Err(AnalysisError::DegenerateSplit);
    }

    let mut colors = BTreeMap::new();
    for n in censored.nodes.union(&clear.nodes) {
        let color = match (censored.nodes.contains(n), clear.nodes.contains(n)) {
            (true, true) => NodeColor::Both,
            (true, false) => NodeColor::OnlyCensored,
            _ => NodeColor::OnlyClear,
        };
        colors.insert(*n, color);
    }

    let mut dual = DualGraph {
        destination: pathset.destination,
        censored,
        clear,
        colors,
        censor_edges: BTreeSet::new(),
        edge_evidence: EdgeEvidence::GroundTruth,
        censor_nodes: censor_nodes.clone(),
        censored_paths,
        clear_paths,
        censored_routes,
    };
    dual.censor_edges = dual.censored.edges.iter().filter(|(_, to)| censor_nodes.contains(to)).copied().collect();
    if dual.censor_edges.is_empty() {
        dual.edge_evidence = EdgeEvidence::Inferred;
        dual.censor_edges = dual
            .censored_routes
            .iter()
            .filter_map(|r| match dual.divergence(r)? {
                (Some(from), to) => Some((from, to)),
                (None, _) => None,
            })
            .collect();
    }
    Ok(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::SourceParams;
    use crate::analysis::PathGroup;
    use crate::verdict::Mechanism;
    use proptest::prelude::*;

    const C: Verdict = Verdict::Censored(Mechanism::PacketDrop);
    const N: Verdict = Verdict::NotCensored;

    fn pathset(groups: &[(&[u32], Verdict)]) -> PathSet {
        let mut ps = PathSet { destination: Ipv4Address::new(203, 0, 113, 1), groups: BTreeMap::new() };
        for (i, (route, v)) in groups.iter().enumerate() {
            let mut g = PathGroup::default();
            g.add_route(&route.iter().map(|&n| Some(NodeId(n))).collect::<Vec<_>>());
            g.verdict = Some(*v);
            ps.groups.insert(SourceParams::new(Ipv4Address::new(198, 51, 100, 1), i as u16), g);
        }
        ps
    }

    #[test]
    fn disjoint_paths_have_no_shared_nodes() {
        let d = build_dual_graph(&pathset(&[(&[1, 2], C), (&[3, 4], N)]), &BTreeSet::new()).unwrap();
        assert_eq!(d.with_color(NodeColor::Both).count(), 0);
        assert_eq!(d.with_color(NodeColor::OnlyCensored).collect::<Vec<_>>(), vec![NodeId(1), NodeId(2)]);
        assert_eq!(d.with_color(NodeColor::OnlyClear).collect::<Vec<_>>(), vec![NodeId(3), NodeId(4)]);
    }

    #[test]
    fn shared_prefix_is_both() {
        let d = build_dual_graph(&pathset(&[(&[1, 2, 3], C), (&[1, 2, 4], N)]), &BTreeSet::new()).unwrap();
        assert_eq!(d.color(NodeId(1)), Some(NodeColor::Both));
        assert_eq!(d.color(NodeId(2)), Some(NodeColor::Both));
        assert_eq!(d.color(NodeId(3)), Some(NodeColor::OnlyCensored));
        assert_eq!(d.edge_evidence, EdgeEvidence::Inferred);
        assert_eq!(d.censor_edges, BTreeSet::from([(NodeId(2), NodeId(3))]));
    }

    #[test]
    fn ground_truth_edges_win() {
        let gt = BTreeSet::from([NodeId(5)]);
        let d = build_dual_graph(&pathset(&[(&[1, 2, 5, 3], C), (&[1, 2, 4], N)]), &gt).unwrap();
        assert_eq!(d.edge_evidence, EdgeEvidence::GroundTruth);
        assert_eq!(d.censor_edges, BTreeSet::from([(NodeId(2), NodeId(5))]));
    }

    #[test]
    fn one_sided_sets_are_degenerate() {
        assert_eq!(
            build_dual_graph(&pathset(&[(&[1], C), (&[2], C)]), &BTreeSet::new()),
            Err(AnalysisError::DegenerateSplit)
        );
        assert_eq!(build_dual_graph(&pathset(&[(&[1], N)]), &BTreeSet::new()), Err(AnalysisError::DegenerateSplit));
    }

    proptest! {
        #[test]
        fn colors_partition_the_universe(
            groups in proptest::collection::vec((proptest::collection::vec(0u32..10, 1..6), any::<bool>()), 2..12)
        ) {
            let owned: Vec<(Vec<u32>, Verdict)> =
                groups.into_iter().map(|(r, c)| (r, if c { C } else { N })).collect();
            let refs: Vec<(&[u32], Verdict)> = owned.iter().map(|(r, v)| (r.as_slice(), *v)).collect();
            let ps = pathset(&refs);
            let Ok(d) = build_dual_graph(&ps, &BTreeSet::new()) else { return Ok(()) };
            prop_assert_eq!(d.universe(), ps.universe());
            for (n, c) in &d.colors {
                let (in_c, in_k) = (d.censored.nodes.contains(n), d.clear.nodes.contains(n));
                match c {
                    NodeColor::OnlyCensored => prop_assert!(in_c && !in_k),
                    NodeColor::OnlyClear => prop_assert!(!in_c && in_k),
                    NodeColor::Both => prop_assert!(in_c && in_k),
                }
            }
        }
    }
}
