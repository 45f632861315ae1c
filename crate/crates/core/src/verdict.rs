use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mechanism {
    RstInjection,
    PacketDrop,
    Blockpage,
    DnsInjection,
}

impl Mechanism {
    pub const fn as_str(self) -> &'static str {
        match self {
            Mechanism::RstInjection => "rst_injection",
            Mechanism::PacketDrop => "packet_drop",
            Mechanism::Blockpage => "blockpage",
            Mechanism::DnsInjection => "dns_injection",
        }
    }
}

/// Outcome for one (destination, source parameters, protocol) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Censored(Mechanism),
    NotCensored,
    Excluded,
}

impl Verdict {
    pub fn is_censored(self) -> bool {
        matches!(self, Verdict::Censored(_))
    }

    /// Censored or NotCensored; Excluded cells carry no information.
    pub fn is_decided(self) -> bool {
        !matches!(self, Verdict::Excluded)
    }
}

/// A destination is affected when its cells disagree: some censored, some
/// not. Excluded cells do not count either way.
pub fn is_affected<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> bool {
    let (mut censored, mut clear) = (false, false);
    for v in verdicts {
        censored |= v.is_censored();
        clear |= *v == Verdict::NotCensored;
    }
    censored && clear
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Censored(m) => write!(f, "censored:{}", m.as_str()),
            Verdict::NotCensored => f.write_str("not_censored"),
            Verdict::Excluded => f.write_str("excluded"),
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "not_censored" => Verdict::NotCensored,
            "excluded" => Verdict::Excluded,
            "censored:rst_injection" => Verdict::Censored(Mechanism::RstInjection),
            "censored:packet_drop" => Verdict::Censored(Mechanism::PacketDrop),
            "censored:blockpage" => Verdict::Censored(Mechanism::Blockpage),
            "censored:dns_injection" => Verdict::Censored(Mechanism::DnsInjection),
            other => return Err(format!("unknown verdict `{other}`")),
        })
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
