//! Shared inputs for the benchmarks.

use std::path::{Path, PathBuf};

use flowstable_core::{AppProtocol, Ipv4Address, SourceParams, Topology};

/// Directory of the shipped topology fixtures.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// Loads a shipped fixture by file name; panics on a broken checkout.
pub fn fixture(name: &str) -> Topology {
    Topology::load(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// A fixed source with destination and protocol of the half-split fixture.
pub fn half_split_cell() -> (Ipv4Address, SourceParams, AppProtocol) {
    (Ipv4Address::new(203, 0, 113, 4), SourceParams::new(Ipv4Address::new(198, 51, 100, 7), 40000), AppProtocol::Https)
}
