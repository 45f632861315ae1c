use std::collections::{BTreeMap, BTreeSet};

use crate::addr::{Ipv4Address, SourceParams};
use crate::analysis::AnalysisError;
use crate::simnet::NodeId;
use crate::verdict::Verdict;

/// Everything seen for one source-parameter combination.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathGroup {
    /// The group's path: every hop that answered, order ignored.
    pub nodes: BTreeSet<NodeId>,
    /// Distinct hop ladders, in first-seen order.
    pub routes: Vec<Vec<Option<NodeId>>>,
    pub samples: usize,
    pub verdict: Option<Verdict>,
}

impl PathGroup {
    pub fn add_route(&mut self, hops: &[Option<NodeId>]) {
        self.nodes.extend(hops.iter().flatten());
        if !self.routes.iter().any(|r| r == hops) {
            self.routes.push(hops.to_vec());
        }
        self.samples += 1;
    }

    /// Present hops of the first route, in TTL order.
    pub fn ordered(&self) -> Vec<NodeId> {
        self.routes.first().map(|r| r.iter().flatten().copied().collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub destination: Ipv4Address,
    pub groups: BTreeMap<SourceParams, PathGroup>,
}

impl PathSet {
    /// Number of distinct node sets among the groups.
    pub fn num_paths(&self) -> Result<usize, AnalysisError> {
        if self.groups.is_empty() {
            return Err(AnalysisError::EmptyPathSet);
        }
        Ok(self.groups.values().map(|g| &g.nodes).collect::<BTreeSet<_>>().len())
    }

    /// Number of distinct router hops across all groups.
    pub fn num_nodes(&self) -> Result<usize, AnalysisError> {
        if self.groups.is_empty() {
            return Err(AnalysisError::EmptyPathSet);
        }
        Ok(self.universe().len())
    }

    pub fn universe(&self) -> BTreeSet<NodeId> {
        self.groups.values().flat_map(|g| g.nodes.iter().copied()).collect()
    }

    /// Attaches verdicts; groups without one keep `None`.
    pub fn set_verdicts(&mut self, verdicts: &BTreeMap<SourceParams, Verdict>) {
        for (src, g) in &mut self.groups {
            g.verdict = verdicts.get(src).copied();
        }
    }

    /// Groups whose repeated traces all followed one ladder.
    pub fn is_stable(&self) -> bool {
        self.groups.values().all(|g| g.routes.len() <= 1)
    }
}
