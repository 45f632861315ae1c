//! IPv4 addresses, /24 prefixes and the source parameters a probe controls.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("invalid IPv4 address `{0}`")]
    InvalidAddress(String),
    #[error("invalid /24 prefix `{0}`")]
    InvalidPrefix(String),
    #[error("host octet {0} is reserved in a /24 source prefix")]
    ReservedHost(u8),
}

/// An IPv4 address stored as a host-order `u32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ipv4Address(pub u32);

impl Ipv4Address {
    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        Self(u32::from_be_bytes([a, b, c, d]))
    }

    pub const fn octets(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    pub const fn host_octet(self) -> u8 {
        self.0 as u8
    }

    /// The lowest `n` bits of the address, `1 <= n <= 8`.
    pub fn low_bits(self, n: u8) -> u8 {
        assert!((1..=8).contains(&n), "low_bits width must be in 1..=8, got {n}");
        (self.0 & ((1u32 << n) - 1)) as u8
    }
}

impl fmt::Display for Ipv4Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Ipv4Addr::from(self.0).fmt(f)
    }
}

impl FromStr for Ipv4Address {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ipv4Addr::from_str(s.trim()).map(|a| Self(u32::from(a))).map_err(|_| AddrError::InvalidAddress(s.to_string()))
    }
}

impl From<Ipv4Addr> for Ipv4Address {
    fn from(a: Ipv4Addr) -> Self {
        Self(u32::from(a))
    }
}

impl Serialize for Ipv4Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A /24 network, written `a.b.c.0/24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subnet24(u32);

impl Subnet24 {
    pub fn of(addr: Ipv4Address) -> Self {
        Self(addr.0 & 0xffff_ff00)
    }

    pub fn network(self) -> Ipv4Address {
        Ipv4Address(self.0)
    }

    pub fn host(self, octet: u8) -> Ipv4Address {
        Ipv4Address(self.0 | octet as u32)
    }

    pub fn contains(self, addr: Ipv4Address) -> bool {
        Self::of(addr) == self
    }

    /// A source address usable by planners: `.0` and `.255` are excluded.
    pub fn source_host(self, octet: u8) -> Result<Ipv4Address, AddrError> {
        match octet {
            0 | 255 => Err(AddrError::ReservedHost(octet)),
            o => Ok(self.host(o)),
        }
    }
}

impl fmt::Display for Subnet24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.network())
    }
}

impl FromStr for Subnet24 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddrError::InvalidPrefix(s.to_string());
        let (addr, len) = s.trim().split_once('/').ok_or_else(bad)?;
        if len != "24" {
            return Err(bad());
        }
        let addr: Ipv4Address = addr.parse().map_err(|_| bad())?;
        Ok(Self::of(addr))
    }
}

impl Serialize for Subnet24 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subnet24 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// First and last port of the ephemeral range planners draw from.
pub const EPHEMERAL_PORTS: std::ops::RangeInclusive<u16> = 32768..=60999;

/// The Flow-ID fields under the prober's control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceParams {
    pub src_ip: Ipv4Address,
    pub src_port: u16,
}

impl SourceParams {
    pub const fn new(src_ip: Ipv4Address, src_port: u16) -> Self {
        Self { src_ip, src_port }
    }
}

impl fmt::Display for SourceParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.src_ip, self.src_port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn low_bits_examples() {
        let a = Ipv4Address::new(10, 0, 0, 5);
        assert_eq!(a.low_bits(3), 5);
        assert_eq!(a.low_bits(1), 1);
        assert_eq!(Ipv4Address::new(10, 0, 0, 0xff).low_bits(8), 0xff);
    }

    #[test]
    #[should_panic]
    fn low_bits_rejects_zero_width() {
        Ipv4Address::new(1, 2, 3, 4).low_bits(0);
    }

    #[test]
    fn prefix_parsing() {
        let p: Subnet24 = "198.51.100.0/24".parse().unwrap();
        assert_eq!(p.host(7), Ipv4Address::new(198, 51, 100, 7));
        assert!(p.contains(Ipv4Address::new(198, 51, 100, 200)));
        assert!("198.51.100.0/16".parse::<Subnet24>().is_err());
        assert_eq!(p.source_host(0), Err(AddrError::ReservedHost(0)));
        assert_eq!(p.source_host(255), Err(AddrError::ReservedHost(255)));
        assert_eq!(p.to_string(), "198.51.100.0/24");
    }

    #[test]
    fn rejects_garbage() {
        assert!("300.1.1.1".parse::<Ipv4Address>().is_err());
        assert!("a.b.c.d".parse::<Ipv4Address>().is_err());
    }

    proptest! {
        #[test]
        fn dotted_quad_round_trips(v in any::<u32>()) {
            let a = Ipv4Address(v);
            prop_assert_eq!(a.to_string().parse::<Ipv4Address>().unwrap(), a);
        }

        #[test]
        fn low_bits_is_modulo(v in any::<u32>(), n in 1u8..=8) {
            prop_assert_eq!(Ipv4Address(v).low_bits(n) as u32, v % (1u32 << n));
        }
    }
}
