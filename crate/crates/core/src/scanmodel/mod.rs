//! Scan observations: port states, hosts, and whole-network scan datasets.
//!
//! A [`ScanDataset`] is the canonical form of one scanner run. Every host in a
//! dataset carries an explicit state for every port of the dataset's port
//! universe, so two datasets built from the same observations compare equal
//! regardless of how sparse the scanner output was.

mod csvio;
mod xml;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
pub use xml::{ingest_scan, ingest_scan_with, write_scan_xml, IngestOptions};

/// Reported state of a probed port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortState {
    Open,
    Closed,
    Filtered,
    OpenFiltered,
}

impl PortState {
    /// Fixed ordering used for label and column indices.
    pub const ALL: [PortState; 4] = [
        PortState::Open,
        PortState::Closed,
        PortState::Filtered,
        PortState::OpenFiltered,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Token used in dataset files and state-change labels.
    pub fn token(self) -> &'static str {
        match self {
            PortState::Open => "Open",
            PortState::Closed => "Closed",
            PortState::Filtered => "Filtered",
            PortState::OpenFiltered => "OpenFiltered",
        }
    }
}

impl PortState {
    /// Token as written by the scanner (`open`, `open|filtered`, ...).
    pub fn scanner_token(self) -> &'static str {
        match self {
            PortState::Open => "open",
            PortState::Closed => "closed",
            PortState::Filtered => "filtered",
            PortState::OpenFiltered => "open|filtered",
        }
    }
}

impl fmt::Display for PortState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PortState {
    type Err = Error;

    /// Parses the dataset token form (`Open`, `Closed`, `Filtered`, `OpenFiltered`).
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.token() == s)
            .ok_or_else(|| Error::UnsupportedState(s.to_string()))
    }
}

/// How scanner state tokens outside the four canonical ones are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMode {
    #[default]
    Strict,
    /// Additionally maps `closed|filtered` and `unfiltered` to [`PortState::Filtered`].
    Lenient,
}

/// Maps a raw scanner state token onto a [`PortState`].
pub fn canonical_port_state(raw: &str, mode: StateMode) -> Result<PortState> {
    let token = raw.trim().to_ascii_lowercase();
    match token.as_str() {
        "open" => Ok(PortState::Open),
        "closed" => Ok(PortState::Closed),
        "filtered" => Ok(PortState::Filtered),
        "open|filtered" => Ok(PortState::OpenFiltered),
        "closed|filtered" | "unfiltered" if mode == StateMode::Lenient => Ok(PortState::Filtered),
        _ => Err(Error::UnsupportedState(raw.to_string())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn token(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            other => Err(Error::data(format!("unsupported protocol `{other}`"))),
        }
    }
}

/// A (protocol, port number) pair. Ordered by protocol first, TCP before UDP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortKey {
    pub protocol: Protocol,
    pub number: u16,
}

impl PortKey {
    pub fn new(protocol: Protocol, number: u16) -> Result<Self> {
        if number == 0 {
            return Err(Error::data("port number must be in 1..=65535"));
        }
        Ok(PortKey { protocol, number })
    }

    pub fn tcp(number: u16) -> Self {
        Self::new(Protocol::Tcp, number).expect("non-zero tcp port")
    }

    pub fn udp(number: u16) -> Self {
        Self::new(Protocol::Udp, number).expect("non-zero udp port")
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.protocol.token(), self.number)
    }
}

impl FromStr for PortKey {
    type Err = Error;

    /// Parses column names of the form `tcp_445`.
    fn from_str(s: &str) -> Result<Self> {
        let (proto, num) = s
            .split_once('_')
            .ok_or_else(|| Error::Schema(format!("`{s}` is not a <proto>_<port> column")))?;
        let number: u16 = num
            .parse()
            .map_err(|_| Error::Schema(format!("`{s}` has an invalid port number")))?;
        PortKey::new(proto.parse()?, number)
    }
}

impl Serialize for PortKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 48-bit hardware address; displayed as uppercase colon-separated octets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::data(format!("invalid MAC address `{s}`"));
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        let mut octets = [0u8; 6];
        for (o, p) in octets.iter_mut().zip(parts) {
            if p.len() != 2 {
                return Err(bad());
            }
            *o = u8::from_str_radix(p, 16).map_err(|_| bad())?;
        }
        Ok(MacAddr(octets))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One host as observed by one scan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostScan {
    pub ip: Ipv4Addr,
    pub mac: Option<MacAddr>,
    pub ports: BTreeMap<PortKey, PortState>,
}

impl HostScan {
    pub fn new(ip: Ipv4Addr, mac: Option<MacAddr>) -> Self {
        HostScan {
            ip,
            mac,
            ports: BTreeMap::new(),
        }
    }

    pub fn with_port(mut self, port: PortKey, state: PortState) -> Self {
        self.ports.insert(port, state);
        self
    }

    /// State of `port`; ports this scan never saw count as closed.
    pub fn state(&self, port: &PortKey) -> PortState {
        self.ports.get(port).copied().unwrap_or(PortState::Closed)
    }

    /// Ports whose state is anything but closed, in port order.
    pub fn non_closed(&self) -> impl Iterator<Item = (PortKey, PortState)> + '_ {
        self.ports
            .iter()
            .filter(|(_, s)| **s != PortState::Closed)
            .map(|(k, s)| (*k, *s))
    }
}

/// Canonical result of one scan over a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanDataset {
    label: String,
    entries: Vec<HostScan>,
    port_universe: Vec<PortKey>,
}

impl ScanDataset {
    /// Builds a dataset, filling ports a host does not list with `Closed`.
    pub fn new(label: impl Into<String>, entries: Vec<HostScan>) -> Result<Self> {
        Self::with_default(label, entries, PortState::Closed)
    }

    /// Builds a dataset, filling ports a host does not list with `default_state`.
    pub fn with_default(
        label: impl Into<String>,
        mut entries: Vec<HostScan>,
        default_state: PortState,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.ip) {
                return Err(Error::data(format!("duplicate IPv4 address {}", e.ip)));
            }
        }
        let universe: BTreeSet<PortKey> = entries
            .iter()
            .flat_map(|e| e.ports.keys().copied())
            .collect();
        for e in &mut entries {
            for p in &universe {
                e.ports.entry(*p).or_insert(default_state);
            }
        }
        Ok(ScanDataset {
            label: label.into(),
            entries,
            port_universe: universe.into_iter().collect(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn entries(&self) -> &[HostScan] {
        &self.entries
    }

    pub fn port_universe(&self) -> &[PortKey] {
        &self.port_universe
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, ip: Ipv4Addr) -> Option<&HostScan> {
        self.entries.iter().find(|e| e.ip == ip)
    }

    pub fn into_entries(self) -> Vec<HostScan> {
        self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_tokens() {
        let strict = StateMode::Strict;
        assert_eq!(canonical_port_state("open|filtered", strict).unwrap(), PortState::OpenFiltered);
        assert_eq!(canonical_port_state("open", strict).unwrap(), PortState::Open);
        assert_eq!(canonical_port_state("closed", strict).unwrap(), PortState::Closed);
        assert_eq!(canonical_port_state("filtered", strict).unwrap(), PortState::Filtered);
    }

    #[test]
    fn lenient_table() {
        let lenient = StateMode::Lenient;
        assert_eq!(canonical_port_state("closed|filtered", lenient).unwrap(), PortState::Filtered);
        assert_eq!(canonical_port_state("unfiltered", lenient).unwrap(), PortState::Filtered);
        match canonical_port_state("closed|filtered", StateMode::Strict) {
            Err(Error::UnsupportedState(s)) => assert_eq!(s, "closed|filtered"),
            other => panic!("expected unsupported state, got {other:?}"),
        }
        assert!(canonical_port_state("weird", lenient).is_err());
    }

    #[test]
    fn lenient_tokens_round_trip_through_dataset_token() {
        for raw in ["closed|filtered", "unfiltered"] {
            let st = canonical_port_state(raw, StateMode::Lenient).unwrap();
            assert_eq!(st.token().parse::<PortState>().unwrap(), st);
        }
    }

    #[test]
    fn mac_canonical_form() {
        let m: MacAddr = "aa-bb-cc-0d-0e-0f".parse().unwrap();
        assert_eq!(m.to_string(), "AA:BB:CC:0D:0E:0F");
        assert!("aa:bb:cc".parse::<MacAddr>().is_err());
        assert!("zz:bb:cc:dd:ee:ff".parse::<MacAddr>().is_err());
    }

    #[test]
    fn port_key_ordering_and_names() {
        let mut keys = vec![PortKey::udp(53), PortKey::tcp(8080), PortKey::tcp(22)];
        keys.sort();
        assert_eq!(keys, vec![PortKey::tcp(22), PortKey::tcp(8080), PortKey::udp(53)]);
        assert_eq!(PortKey::udp(123).to_string(), "udp_123");
        assert_eq!("tcp_445".parse::<PortKey>().unwrap(), PortKey::tcp(445));
        assert!("tcp_0".parse::<PortKey>().is_err());
        assert!("tcp_70000".parse::<PortKey>().is_err());
        assert!("sctp_80".parse::<PortKey>().is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ips_and_materializes_universe() {
        let ip: Ipv4Addr = "10.0.0.1".parse().unwrap();
        let dup = vec![HostScan::new(ip, None), HostScan::new(ip, None)];
        assert!(matches!(ScanDataset::new("x", dup), Err(Error::Data(_))));

        let a = HostScan::new(ip, None).with_port(PortKey::tcp(80), PortState::Open);
        let b = HostScan::new("10.0.0.2".parse().unwrap(), None)
            .with_port(PortKey::udp(53), PortState::OpenFiltered);
        let ds = ScanDataset::with_default("x", vec![a, b], PortState::Filtered).unwrap();
        assert_eq!(ds.port_universe(), &[PortKey::tcp(80), PortKey::udp(53)]);
        assert_eq!(ds.entries()[0].state(&PortKey::udp(53)), PortState::Filtered);
        assert_eq!(ds.entries()[1].state(&PortKey::tcp(80)), PortState::Filtered);
        // outside the universe
        assert_eq!(ds.entries()[1].state(&PortKey::tcp(22)), PortState::Closed);
    }
}
