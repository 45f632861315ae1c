//! Path-diversity metrics, censorship fractions, bit-pattern summaries,
//! censored/clear graph construction and effect classification.

pub mod effect;
pub mod graph;
pub mod metrics;
pub mod paths;

use thiserror::Error;

use crate::simnet::NodeId;

pub use effect::{classify_effect, Annotations, Effect, EffectReport, Evidence, NodeAnnotation, Scope};
pub use graph::{build_dual_graph, DualGraph, EdgeEvidence, Graph, NodeColor};
pub use metrics::{bit_group_summary, cdf, no_censorship_fraction, BitGroupRow, Fraction, GroupBy};
pub use paths::{PathGroup, PathSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("path set has no groups")]
    EmptyPathSet,
    #[error("verdict matrix is empty")]
    EmptyMatrix,
    #[error("every cell was excluded; the fraction is undefined")]
    AllExcluded,
    #[error("no cell falls in group {0}; the source grid does not cover it")]
    EmptyGroup(String),
    #[error("need at least one censored and one clear group")]
    DegenerateSplit,
    #[error("node {0} has no AS/location annotation")]
    AnnotationMissing(NodeId),
}
