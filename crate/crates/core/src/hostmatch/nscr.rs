//! Network state change report: per matched host, one label per port.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MatchedPair;
use crate::error::{Error, Result};
use crate::scanmodel::{MacAddr, PortKey, PortState};

/// `<From>To<To>` over the four port states; 16 labels in total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateChangeLabel {
    pub from: PortState,
    pub to: PortState,
}

impl StateChangeLabel {
    pub const COUNT: usize = 16;
    pub const UNCHANGED_CLOSED: StateChangeLabel = StateChangeLabel {
        from: PortState::Closed,
        to: PortState::Closed,
    };

    pub const fn new(from: PortState, to: PortState) -> Self {
        StateChangeLabel { from, to }
    }

    /// `from` is the outer index, `to` the inner one.
    pub fn index(self) -> usize {
        self.from.index() * 4 + self.to.index()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Some(Self::new(PortState::from_index(i / 4)?, PortState::from_index(i % 4)?))
    }

    pub fn all() -> impl Iterator<Item = StateChangeLabel> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }

    pub fn is_change(self) -> bool {
        self.from != self.to
    }
}

impl fmt::Display for StateChangeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}To{}", self.from, self.to)
    }
}

impl FromStr for StateChangeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::data(format!("unknown state-change label `{s}`")))
    }
}

impl Serialize for StateChangeLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateChangeLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One host's row. `labels` is aligned with the owning [`Nscr`]'s port list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NscrEntry {
    pub ip_initial: Option<Ipv4Addr>,
    pub ip_updated: Option<Ipv4Addr>,
    pub mac: Option<MacAddr>,
    pub labels: Vec<StateChangeLabel>,
    /// Ground truth; only evaluation datasets carry it.
    pub vulnerable: Option<bool>,
}

impl NscrEntry {
    /// True when at least one port changed state.
    pub fn has_change(&self) -> bool {
        self.labels.iter().any(|l| l.is_change())
    }

    /// Most specific address for display and ordering: updated, else initial.
    pub fn display_ip(&self) -> Option<Ipv4Addr> {
        self.ip_updated.or(self.ip_initial)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Nscr {
    ports: Vec<PortKey>,
    entries: Vec<NscrEntry>,
}

impl Nscr {
    pub fn new(ports: Vec<PortKey>, entries: Vec<NscrEntry>) -> Result<Self> {
        if ports.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("NSCR ports must be strictly increasing"));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.labels.len() != ports.len() {
                return Err(Error::data(format!(
                    "NSCR row {i} has {} labels for {} ports",
                    e.labels.len(),
                    ports.len()
                )));
            }
            if e.ip_initial.is_none() && e.ip_updated.is_none() {
                return Err(Error::data(format!("NSCR row {i} has no address on either side")));
            }
        }
        Ok(Nscr { ports, entries })
    }

    pub fn ports(&self) -> &[PortKey] {
        &self.ports
    }

    pub fn entries(&self) -> &[NscrEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, entry: usize, port: &PortKey) -> Option<StateChangeLabel> {
        let col = self.ports.binary_search(port).ok()?;
        Some(self.entries[entry].labels[col])
    }

    /// Same ports, subset of rows.
    pub fn with_entries(&self, entries: Vec<NscrEntry>) -> Result<Self> {
        Nscr::new(self.ports.clone(), entries)
    }

    pub fn vulnerable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.vulnerable == Some(true)).count()
    }

    /// Whether every row carries a ground-truth flag.
    pub fn has_ground_truth(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.vulnerable.is_some())
    }

    pub fn into_parts(self) -> (Vec<PortKey>, Vec<NscrEntry>) {
        (self.ports, self.entries)
    }
}

/// Builds the report from a matching. Absent sides count as all-closed; rows
/// are ordered by `(ip_initial, ip_updated)`.
pub fn build_nscr(pairs: &[MatchedPair]) -> Nscr {
    let ports: Vec<PortKey> = pairs
        .iter()
        .flat_map(|p| p.initial().into_iter().chain(p.updated()))
        .flat_map(|h| h.ports.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut entries: Vec<NscrEntry> = pairs
        .iter()
        .map(|p| {
            let (ini, upd) = (p.initial(), p.updated());
            let labels = ports
                .iter()
                .map(|k| {
                    StateChangeLabel::new(
                        ini.map_or(PortState::Closed, |h| h.state(k)),
                        upd.map_or(PortState::Closed, |h| h.state(k)),
                    )
                })
                .collect();
            NscrEntry {
                ip_initial: ini.map(|h| h.ip),
                ip_updated: upd.map(|h| h.ip),
                mac: upd.and_then(|h| h.mac).or(ini.and_then(|h| h.mac)),
                labels,
                vulnerable: None,
            }
        })
        .collect();
    entries.sort_by_key(|e| (e.ip_initial, e.ip_updated));
    Nscr { ports, entries }
}

pub fn write_nscr(nscr: &Nscr, path: impl AsRef<Path>) -> Result<()> {
    write_nscr_to(nscr, File::create(path)?)
}

/// Writes `ip_initial,ip_updated,mac,<proto>_<port>...[,vulnerable]`; the
/// `vulnerable` column is present iff some row carries ground truth.
pub fn write_nscr_to<W: Write>(nscr: &Nscr, out: W) -> Result<()> {
    let with_truth = nscr.entries.iter().any(|e| e.vulnerable.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["ip_initial", "ip_updated", "mac"].map(String::from).to_vec();
    header.extend(nscr.ports.iter().map(PortKey::to_string));
    if with_truth {
        header.push("vulnerable".into());
    }
    w.write_record(&header)?;
    for e in &nscr.entries {
        let mut rec = vec![
            opt_str(e.ip_initial),
            opt_str(e.ip_updated),
            opt_str(e.mac),
        ];
        rec.extend(e.labels.iter().map(StateChangeLabel::to_string));
        if with_truth {
            rec.push(opt_str(e.vulnerable));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn read_nscr(path: impl AsRef<Path>) -> Result<Nscr> {
    read_nscr_from(Error::open(path.as_ref())?)
}

pub fn read_nscr_from<R: Read>(input: R) -> Result<Nscr> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed = ["ip_initial", "ip_updated", "mac"];
    if header.len() < 3 || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(Error::Schema(
            "NSCR header must start with `ip_initial,ip_updated,mac`".into(),
        ));
    }
    let with_truth = header.iter().next_back() == Some("vulnerable");
    let port_end = header.len() - usize::from(with_truth);
    let ports = (3..port_end)
        .map(|i| header[i].parse::<PortKey>())
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let ip = |s: &str| -> Result<Option<Ipv4Addr>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| Error::data(format!("row {row}: invalid IPv4 `{s}`")))
        };
        let mac = match &rec[2] {
            "" => None,
            m => Some(m.parse()?),
        };
        let labels = (3..port_end)
            .map(|i| rec[i].parse::<StateChangeLabel>())
            .collect::<Result<Vec<_>>>()?;
        let vulnerable = if with_truth {
            match &rec[port_end] {
                "" => None,
                "true" | "1" => Some(true),
                "false" | "0" => Some(false),
                other => {
                    return Err(Error::data(format!("row {row}: invalid vulnerable flag `{other}`")))
                }
            }
        } else {
            None
        };
        entries.push(NscrEntry {
            ip_initial: ip(&rec[0])?,
            ip_updated: ip(&rec[1])?,
            mac,
            labels,
            vulnerable,
        });
    }
    Nscr::new(ports, entries)
}
