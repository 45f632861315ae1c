use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::addr::SourceParams;
use crate::analysis::AnalysisError;
use crate::verdict::{is_affected, Verdict};

/// An exact ratio of cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub numerator: usize,
    pub denominator: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// Share of decided cells that saw no censorship. Excluded cells count
/// toward neither side.
pub fn no_censorship_fraction(matrix: &BTreeMap<SourceParams, Verdict>) -> Result<Fraction, AnalysisError> {
    if matrix.is_empty() {
        return Err(AnalysisError::EmptyMatrix);
    }
    let clear = matrix.values().filter(|v| **v == Verdict::NotCensored).count();
    let decided = matrix.values().filter(|v| v.is_decided()).count();
    if decided == 0 {
        return Err(AnalysisError::AllExcluded);
    }
    Ok(Fraction { numerator: clear, denominator: decided })
}

/// Empirical CDF: one `(value, share of values <= value)` point per
/// distinct value, ascending.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let share = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = share,
            _ => points.push((*v, share)),
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    SrcIpLow3,
    SrcPortLow3,
    PerSourceIp,
    PerSourcePort,
    PerIpPortPair,
}

impl GroupBy {
    pub const ALL: [GroupBy; 5] = [
        GroupBy::SrcIpLow3,
        GroupBy::SrcPortLow3,
        GroupBy::PerSourceIp,
        GroupBy::PerSourcePort,
        GroupBy::PerIpPortPair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::SrcIpLow3 => "src-ip-low3",
            GroupBy::SrcPortLow3 => "src-port-low3",
            GroupBy::PerSourceIp => "per-source-ip",
            GroupBy::PerSourcePort => "per-source-port",
            GroupBy::PerIpPortPair => "per-ip-port-pair",
        }
    }

    pub fn key(self, src: &SourceParams) -> String {
        match self {
            GroupBy::SrcIpLow3 => format!("{:03b}", src.src_ip.low_bits(3)),
            GroupBy::SrcPortLow3 => format!("{:03b}", src.src_port & 0b111),
            GroupBy::PerSourceIp => src.src_ip.to_string(),
            GroupBy::PerSourcePort => src.src_port.to_string(),
            GroupBy::PerIpPortPair => src.to_string(),
        }
    }

    fn is_low3(self) -> bool {
        matches!(self, GroupBy::SrcIpLow3 | GroupBy::SrcPortLow3)
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupBy::ALL.into_iter().find(|g| g.as_str() == s).ok_or_else(|| format!("unknown grouping `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitGroupRow {
    pub group: String,
    /// Affected destinations where this group had a censored cell.
    pub affected_destinations: usize,
    pub censored_cells: usize,
}

/// Censorship per source-parameter group across destinations (one matrix
/// per destination), sorted by censored cells, most first.
pub fn bit_group_summary(
    matrices: &[BTreeMap<SourceParams, Verdict>],
    group_by: GroupBy,
) -> Result<Vec<BitGroupRow>, AnalysisError> {
    if matrices.iter().all(BTreeMap::is_empty) {
        return Err(AnalysisError::EmptyMatrix);
    }
    let mut rows: BTreeMap<String, BitGroupRow> = BTreeMap::new();
    for m in matrices {
        let affected = is_affected(m.values());
        let mut hit = BTreeMap::new();
        for (src, v) in m {
            let key = group_by.key(src);
            let row = rows.entry(key.clone()).or_insert_with(|| BitGroupRow {
                group: key.clone(),
                affected_destinations: 0,
                censored_cells: 0,
            });
            if v.is_censored() {
                row.censored_cells += 1;
                hit.insert(key, ());
            }
        }
        if affected {
            for key in hit.keys() {
                rows.get_mut(key).expect("row exists").affected_destinations += 1;
            }
        }
    }
    if group_by.is_low3() {
        if let Some(missing) = (0..8).map(|b| format!("{b:03b}")).find(|k| !rows.contains_key(k)) {
            return Err(AnalysisError::EmptyGroup(missing));
        }
    }
    let mut out: Vec<_> = rows.into_values().collect();
    out.sort_by(|a, b| {
        b.censored_cells
            .cmp(&a.censored_cells)
            .then(b.affected_destinations.cmp(&a.affected_destinations))
            .then_with(|| a.group.cmp(&b.group))
    });
    Ok(out)
}
