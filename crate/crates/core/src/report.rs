//! Plot-ready CSV tables. Column orders are fixed and every real number is
//! printed with four decimals so that reports diff cleanly.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use crate::addr::{Ipv4Address, SourceParams};
use crate::analysis::{cdf, no_censorship_fraction, BitGroupRow, DualGraph, EffectReport, Fraction};
use crate::experiments::Variation;
use crate::flow::AppProtocol;
use crate::simnet::Topology;
use crate::verdict::{is_affected, Verdict};

pub const PATH_COUNT_COLUMNS: [&str; 3] = ["variation", "num_paths", "count"];
pub const AFFECTED_COLUMNS: [&str; 6] =
    ["destination", "asn", "protocol", "affected", "decided_cells", "no_censorship"];
pub const CDF_COLUMNS: [&str; 3] = ["protocol", "fraction", "cdf"];
pub const BITS_COLUMNS: [&str; 3] = ["group", "affected_destinations", "censored_cells"];
pub const NODE_COLUMNS: [&str; 5] = ["node", "address", "asn", "geo", "color"];
pub const EDGE_COLUMNS: [&str; 4] = ["source", "target", "graph", "censor_edge"];
pub const EFFECT_COLUMNS: [&str; 8] =
    ["destination", "effect", "divergence", "region", "censored_asns", "clear_asns", "censored_geo", "clear_geo"];

pub fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

/// In-memory CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        self.write_to(std::fs::File::create(path)?)
    }
}

/// Distribution of path counts per variation: how many destinations saw
/// each number of distinct paths.
pub fn path_count_table(results: &[(Variation, usize)]) -> Table {
    let mut counts: BTreeMap<(Variation, usize), usize> = BTreeMap::new();
    for r in results {
        *counts.entry(*r).or_default() += 1;
    }
    let mut t = Table::new(&PATH_COUNT_COLUMNS);
    for ((v, n), c) in counts {
        t.push(vec![v.to_string(), n.to_string(), c.to_string()]);
    }
    t
}

pub type VerdictsByDestination = BTreeMap<(Ipv4Address, AppProtocol), BTreeMap<SourceParams, Verdict>>;

/// One row per (destination, protocol). `asn_of` maps a destination to its
/// AS; unknown destinations get an empty cell.
pub fn affected_table(verdicts: &VerdictsByDestination, asn_of: impl Fn(Ipv4Address) -> Option<u32>) -> Table {
    let mut t = Table::new(&AFFECTED_COLUMNS);
    for ((dst, protocol), m) in verdicts {
        let fraction = no_censorship_fraction(m).ok();
        t.push(vec![
            dst.to_string(),
            asn_of(*dst).map(|a| a.to_string()).unwrap_or_default(),
            protocol.to_string(),
            is_affected(m.values()).to_string(),
            fraction.map_or(0, |f| f.denominator).to_string(),
            fraction.map(|f| fixed4(f.value())).unwrap_or_default(),
        ]);
    }
    t
}

/// No-censorship fractions of affected destinations, per protocol.
pub fn affected_fractions(verdicts: &VerdictsByDestination) -> BTreeMap<AppProtocol, Vec<Fraction>> {
    let mut out: BTreeMap<AppProtocol, Vec<Fraction>> = BTreeMap::new();
    for ((_, protocol), m) in verdicts {
        if !is_affected(m.values()) {
            continue;
        }
        if let Ok(f) = no_censorship_fraction(m) {
            out.entry(*protocol).or_default().push(f);
        }
    }
    out
}

/// Empirical CDF of the fractions of affected destinations, per protocol.
pub fn cdf_table(verdicts: &VerdictsByDestination) -> Table {
    let mut t = Table::new(&CDF_COLUMNS);
    for (protocol, fractions) in affected_fractions(verdicts) {
        let values: Vec<f64> = fractions.iter().map(|f| f.value()).collect();
        for (x, y) in cdf(&values) {
            t.push(vec![protocol.to_string(), fixed4(x), fixed4(y)]);
        }
    }
    t
}

pub fn bits_table(rows: &[BitGroupRow]) -> Table {
    let mut t = Table::new(&BITS_COLUMNS);
    for r in rows {
        t.push(vec![r.group.clone(), r.affected_destinations.to_string(), r.censored_cells.to_string()]);
    }
    t
}

/// Node and edge lists of a dual graph. Node attributes come from
/// `topology` when given.
pub fn graph_tables(dual: &DualGraph, topology: Option<&Topology>) -> (Table, Table) {
    let mut nodes = Table::new(&NODE_COLUMNS);
    for (id, color) in &dual.colors {
        let node = topology.and_then(|t| t.node(*id));
        nodes.push(vec![
            id.to_string(),
            node.map(|n| n.address().to_string()).unwrap_or_default(),
            node.map(|n| n.asn.to_string()).unwrap_or_default(),
            node.map(|n| n.geo.clone()).unwrap_or_default(),
            color.as_str().to_string(),
        ]);
    }
    let mut edges = Table::new(&EDGE_COLUMNS);
    for (graph, g) in [("censored", &dual.censored), ("clear", &dual.clear)] {
        for (a, b) in &g.edges {
            let flagged = graph == "censored" && dual.censor_edges.contains(&(*a, *b));
            edges.push(vec![a.to_string(), b.to_string(), graph.to_string(), flagged.to_string()]);
        }
    }
    (nodes, edges)
}

fn join<T: ToString>(items: &BTreeSet<T>) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

pub fn effects_table(reports: &[EffectReport]) -> Table {
    let mut t = Table::new(&EFFECT_COLUMNS);
    for r in reports {
        let e = &r.evidence;
        t.push(vec![
            r.destination.to_string(),
            r.effect.as_str().to_string(),
            e.divergence.map(|n| n.to_string()).unwrap_or_default(),
            join(&e.region),
            join(&e.censored_asns),
            join(&e.clear_asns),
            join(&e.censored_geo),
            join(&e.clear_geo),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verdict::Mechanism;

    fn src(h: u8) -> SourceParams {
        SourceParams::new(Ipv4Address::new(198, 51, 100, h), 40000)
    }

    fn half() -> VerdictsByDestination {
        let m = (0..8u8)
            .map(|h| {
                (src(h + 1), if h % 2 == 0 { Verdict::Censored(Mechanism::RstInjection) } else { Verdict::NotCensored })
            })
            .collect();
        let clear = (0..8u8).map(|h| (src(h + 1), Verdict::NotCensored)).collect();
        BTreeMap::from([
            ((Ipv4Address::new(203, 0, 113, 1), AppProtocol::Http), m),
            ((Ipv4Address::new(203, 0, 113, 2), AppProtocol::Http), clear),
        ])
    }

    #[test]
    fn affected_table_rows() {
        let t = affected_table(&half(), |d| (d.host_octet() == 1).then_some(64500));
        assert_eq!(
            t.to_csv(),
            "destination,asn,protocol,affected,decided_cells,no_censorship\n\
             203.0.113.1,64500,http,true,8,0.5000\n\
             203.0.113.2,,http,false,8,1.0000\n"
        );
    }

    #[test]
    fn cdf_uses_affected_destinations_only() {
        assert_eq!(cdf_table(&half()).to_csv(), "protocol,fraction,cdf\nhttp,0.5000,1.0000\n");
    }

    #[test]
    fn path_count_table_counts_destinations_per_path_count() {
        let t = path_count_table(&[(Variation::VaryIp, 2), (Variation::VaryIp, 2), (Variation::AllConstant, 1)]);
        assert_eq!(t.to_csv(), "variation,num_paths,count\nall-constant,1,1\nvary-ip,2,2\n");
    }

    #[test]
    fn empty_tables_keep_their_header() {
        assert_eq!(cdf_table(&BTreeMap::new()).to_csv(), "protocol,fraction,cdf\n");
        assert_eq!(bits_table(&[]).to_csv(), "group,affected_destinations,censored_cells\n");
    }

    #[test]
    fn four_decimals() {
        assert_eq!(fixed4(5.0 / 8.0), "0.6250");
        assert_eq!(fixed4(1.0 / 3.0), "0.3333");
    }
}
