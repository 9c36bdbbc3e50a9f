//! Labeled evaluation reports and address-mutation experiments.
//!
//! Three kinds of data set are produced, all over the fixed port universe:
//!
//! * `synthetic`: valid-change copies of the scenario templates, planted
//!   vulnerable copies, and unchanged scenario hosts as filler;
//! * `real`: a handful of changes drawn from a simulated daily change feed,
//!   unchanged feed hosts as filler, plus planted vulnerable copies;
//! * `realistic`: like `real` with many more feed changes.
//!
//! The simulated feed stands in for historical internet-wide scan data, which
//! only records open ports: feed hosts are open or closed on every port and
//! share a few service profiles. Each changed host modifies a number of ports
//! drawn from a geometric law truncated to `1..=13` whose mean is 1.61.
//! Scenario hosts come from an SDN testbed instead, where ports no rule
//! exposes read as filtered.

mod mutate;
mod templates;

use std::collections::HashSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hostmatch::{self, Nscr, NscrEntry, StateChangeLabel};
use crate::rng::{self, Rng};
use crate::scanmodel::{self, MacAddr, PortKey, PortState};

pub use mutate::{mutate_addresses, scan_pair_from_nscr, Mutation, MutationSpec, FINGERPRINT_PORTS};
pub use templates::{
    no_change_profiles, port_universe, scenario_templates, ChangePattern, ScenarioName, ScenarioTemplate,
};

pub const PAPER_TOTAL: usize = 405;
/// Largest number of ports a simulated feed change touches.
pub const FEED_MAX_CHANGED_PORTS: usize = 13;
/// Mean number of ports a simulated feed change touches.
pub const FEED_MEAN_CHANGED_PORTS: f64 = 1.61;
/// Changed hosts available in the simulated feed.
pub const FEED_CHANGE_POOL: usize = 200;
/// Distinct service profiles among feed hosts; the i-th is drawn with weight 1/(i+1).
pub const FEED_PROFILES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Real,
    Realistic,
}

impl DatasetKind {
    pub fn default_valid_changes(self) -> usize {
        match self {
            DatasetKind::Synthetic => 72,
            DatasetKind::Real => 10,
            DatasetKind::Realistic => 100,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Real => "real",
            DatasetKind::Realistic => "realistic",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "real" => Ok(DatasetKind::Real),
            "realistic" => Ok(DatasetKind::Realistic),
            other => Err(Error::param(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Rows in the generated report; unchanged hosts fill what the changes leave.
    pub total: usize,
    pub vulnerable_count: usize,
    pub valid_change_count: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// 405 rows with the kind's default number of valid changes.
    pub fn new(kind: DatasetKind, vulnerable_count: usize, seed: u64) -> Self {
        DatasetSpec {
            kind,
            total: PAPER_TOTAL,
            vulnerable_count,
            valid_change_count: kind.default_valid_changes(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vulnerable_count + self.valid_change_count > self.total {
            return Err(Error::Generation(format!(
                "{} vulnerable + {} valid changes exceed {} rows",
                self.vulnerable_count, self.valid_change_count, self.total
            )));
        }
        if self.kind != DatasetKind::Synthetic && self.valid_change_count > FEED_CHANGE_POOL {
            return Err(Error::Generation(format!(
                "only {FEED_CHANGE_POOL} feed changes available, {} requested",
                self.valid_change_count
            )));
        }
        if self.total > 60_000 {
            return Err(Error::Generation("at most 60000 hosts fit the address plan".into()));
        }
        Ok(())
    }
}

/// Labeled report following `spec`; rows are in a seeded random order and
/// every row carries its ground-truth flag.
pub fn generate(spec: &DatasetSpec) -> Result<Nscr> {
    spec.validate()?;
    let ports = port_universe();
    let templates = scenario_templates();
    let vulnerable_patterns: Vec<&ChangePattern> =
        templates.iter().flat_map(|t| &t.vulnerable_changes).collect();
    let vulnerable_rows: HashSet<Vec<StateChangeLabel>> =
        vulnerable_patterns.iter().map(|p| p.row(&ports)).collect();

    let mut rng = rng::seeded(spec.seed);
    let profiles = FeedProfiles::new(&ports, &mut rng::split(spec.seed, 2));
    let mut rows: Vec<(Vec<StateChangeLabel>, bool)> = Vec::with_capacity(spec.total);

    // valid changes
    match spec.kind {
        DatasetKind::Synthetic => {
            let valid: Vec<&ChangePattern> = templates.iter().flat_map(|t| &t.valid_changes).collect();
            for i in 0..spec.valid_change_count {
                rows.push((valid[i % valid.len()].row(&ports), false));
            }
        }
        DatasetKind::Real | DatasetKind::Realistic => {
            let mut feed = rng::split(spec.seed, 1);
            let pool = feed_changes(&ports, &profiles, &vulnerable_rows, &mut feed);
            for row in pool.choose_multiple(&mut rng, spec.valid_change_count) {
                rows.push((row.clone(), false));
            }
        }
    }

    // planted vulnerable hosts, spread over the patterns in a seeded order
    let mut order: Vec<&ChangePattern> = vulnerable_patterns.clone();
    order.shuffle(&mut rng);
    for i in 0..spec.vulnerable_count {
        rows.push((order[i % order.len()].row(&ports), true));
    }

    // unchanged filler
    let scenario_hosts: Vec<Vec<StateChangeLabel>> = no_change_profiles().iter().map(|p| p.row(&ports)).collect();
    while rows.len() < spec.total {
        let row = match spec.kind {
            DatasetKind::Synthetic => scenario_hosts.choose(&mut rng).expect("non-empty filler").clone(),
            _ => profiles.unchanged_row(&mut rng),
        };
        rows.push((row, false));
    }
    rows.shuffle(&mut rng);

    let ips = unique_ips(spec.total, &mut rng);
    let macs = unique_macs(spec.total, &mut rng);
    let entries = rows
        .into_iter()
        .zip(ips)
        .zip(macs)
        .map(|(((labels, vulnerable), ip), mac)| NscrEntry {
            ip_initial: Some(ip),
            ip_updated: Some(ip),
            mac: Some(mac),
            labels,
            vulnerable: Some(vulnerable),
        })
        .collect();
    Nscr::new(ports, entries)
}

/// Writes the generated report as NSCR CSV (with the `vulnerable` column).
pub fn generate_to_file(spec: &DatasetSpec, path: impl AsRef<Path>) -> Result<Nscr> {
    let nscr = generate(spec)?;
    hostmatch::write_nscr(&nscr, path)?;
    Ok(nscr)
}

/// Success probability of a geometric law on `1..=max` with the given mean.
pub fn truncated_geometric_p(mean: f64, max: usize) -> f64 {
    let mean_of = |p: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for m in 1..=max {
            let w = (1.0 - p).powi(m as i32 - 1) * p;
            num += m as f64 * w;
            den += w;
        }
        num / den
    };
    // the mean falls as p grows
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_of(mid) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn sample_changed_ports(rng: &mut Rng, p: f64, max: usize) -> usize {
    loop {
        let mut m = 1;
        while m <= max && !rng.random_bool(p) {
            m += 1;
        }
        if m <= max {
            return m;
        }
    }
}

/// How often a feed host exposes a service. An internet-wide scan history
/// only records open ports, so feed hosts are open or closed, never filtered.
fn service_weight(port: &PortKey) -> f64 {
    match (port.protocol, port.number) {
        (scanmodel::Protocol::Tcp, 443) => 0.6,
        (scanmodel::Protocol::Tcp, 80) => 0.4,
        (scanmodel::Protocol::Tcp, 22) => 0.25,
        (scanmodel::Protocol::Udp, 500) => 0.15,
        (scanmodel::Protocol::Udp, 123 | 161) => 0.1,
        (_, 53 | 8080) => 0.05,
        _ => 0.02,
    }
}

fn feed_profile(ports: &[PortKey], rng: &mut Rng) -> Vec<PortState> {
    ports
        .iter()
        .map(|p| {
            if rng.random_bool(service_weight(p)) {
                PortState::Open
            } else {
                PortState::Closed
            }
        })
        .collect()
}

/// Service profiles of feed hosts. An operator's public hosts run a few
/// standard builds, so a handful of profiles covers them, the first few
/// being the most common.
struct FeedProfiles {
    states: Vec<Vec<PortState>>,
}

impl FeedProfiles {
    fn new(ports: &[PortKey], rng: &mut Rng) -> Self {
        let mut states: Vec<Vec<PortState>> = Vec::with_capacity(FEED_PROFILES);
        while states.len() < FEED_PROFILES {
            let p = feed_profile(ports, rng);
            if !states.contains(&p) {
                states.push(p);
            }
        }
        FeedProfiles { states }
    }

    fn pick(&self, rng: &mut Rng) -> &[PortState] {
        let i = rand::seq::index::sample_weighted(rng, self.states.len(), |i| 1.0 / (i + 1) as f64, 1)
            .expect("positive weights")
            .index(0);
        &self.states[i]
    }

    fn unchanged_row(&self, rng: &mut Rng) -> Vec<StateChangeLabel> {
        self.pick(rng).iter().map(|&s| StateChangeLabel { from: s, to: s }).collect()
    }
}

/// Simulated feed of changed hosts: a profile host where a geometric number
/// of services appear or disappear, popular services being likelier to
/// change. Rows equal to a vulnerable pattern are redrawn.
fn feed_changes(
    ports: &[PortKey],
    profiles: &FeedProfiles,
    vulnerable_rows: &HashSet<Vec<StateChangeLabel>>,
    rng: &mut Rng,
) -> Vec<Vec<StateChangeLabel>> {
    let p = truncated_geometric_p(FEED_MEAN_CHANGED_PORTS, FEED_MAX_CHANGED_PORTS);
    let weights: Vec<f64> = ports.iter().map(service_weight).collect();
    let mut pool = Vec::with_capacity(FEED_CHANGE_POOL);
    while pool.len() < FEED_CHANGE_POOL {
        let profile = profiles.pick(rng);
        let m = sample_changed_ports(rng, p, FEED_MAX_CHANGED_PORTS.min(ports.len()));
        let changed: Vec<usize> = rand::seq::index::sample_weighted(rng, ports.len(), |i| weights[i], m)
            .expect("positive weights")
            .into_vec();
        let row: Vec<StateChangeLabel> = profile
            .iter()
            .enumerate()
            .map(|(i, &from)| {
                let to = match (changed.contains(&i), from) {
                    (false, s) => s,
                    (true, PortState::Open) => PortState::Closed,
                    (true, _) => PortState::Open,
                };
                StateChangeLabel { from, to }
            })
            .collect();
        if !vulnerable_rows.contains(&row) {
            pool.push(row);
        }
    }
    pool
}

/// Distinct addresses in 10.0.0.0/16, avoiding .0 and .255 host octets.
pub(crate) fn unique_ips(n: usize, rng: &mut Rng) -> Vec<Ipv4Addr> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, b): (u8, u8) = (rng.random(), rng.random_range(1..255));
        if seen.insert((a, b)) {
            out.push(Ipv4Addr::new(10, 0, a, b));
        }
    }
    out
}

/// Distinct locally administered unicast MACs.
pub(crate) fn unique_macs(n: usize, rng: &mut Rng) -> Vec<MacAddr> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut b: [u8; 6] = rng.random();
        b[0] = (b[0] & 0xfc) | 0x02;
        if seen.insert(b) {
            out.push(MacAddr(b));
        }
    }
    out
}

/// Worked example: an SMB server moves to a new switch while a stale rule
/// keeps forwarding port 445 to its old subnet, and the web server is
/// readdressed. Returns (initial, updated) scanner XML.
pub fn worked_example_xml() -> (String, String) {
    use scanmodel::HostScan;
    let t = PortKey::tcp;
    let mac = |last: u8| Some(MacAddr([0x02, 0, 0, 0, 1, last]));
    let host = |ip: [u8; 4], m: Option<MacAddr>, states: &[(u16, PortState)]| {
        states
            .iter()
            .fold(HostScan::new(Ipv4Addr::from(ip), m), |h, (p, s)| h.with_port(t(*p), *s))
    };
    use PortState::{Closed, Filtered, Open};
    let initial = vec![
        host([10, 0, 1, 11], mac(11), &[(22, Open), (80, Open), (139, Closed), (445, Closed)]),
        host([10, 0, 1, 12], mac(12), &[(22, Open), (80, Closed), (139, Open), (445, Open)]),
        host([10, 0, 1, 13], mac(13), &[(22, Open), (80, Closed), (139, Closed), (445, Closed)]),
    ];
    let updated = vec![
        host([10, 0, 1, 111], mac(11), &[(22, Open), (80, Open), (139, Closed), (445, Closed)]),
        host([10, 0, 2, 10], mac(12), &[(22, Open), (80, Closed), (139, Open), (445, Filtered)]),
        host([10, 0, 1, 13], mac(13), &[(22, Open), (80, Closed), (139, Closed), (445, Open)]),
    ];
    let ds = |label: &str, hosts| scanmodel::ScanDataset::new(label, hosts).expect("fixture hosts");
    (
        scanmodel::write_scan_xml(&ds("initial", initial)),
        scanmodel::write_scan_xml(&ds("updated", updated)),
    )
}

#[derive(Serialize)]
struct TemplateFixture<'a> {
    note: &'static str,
    ports: Vec<PortKey>,
    scenarios: &'a [ScenarioTemplate],
    no_change_profiles: Vec<ChangePattern>,
}

/// Scenario templates as pretty JSON.
pub fn templates_json() -> String {
    let scenarios = scenario_templates();
    let fixture = TemplateFixture {
        note: "label patterns are this tool's own encoding of each scenario, not captured data",
        ports: port_universe(),
        scenarios: &scenarios,
        no_change_profiles: no_change_profiles(),
    };
    let mut s = serde_json::to_string_pretty(&fixture).expect("serializable");
    s.push('\n');
    s
}

/// Writes `scenarios.json`, `worked-initial.xml` and `worked-updated.xml`
/// into `dir` and returns the templates.
pub fn scenario_fixtures(dir: impl AsRef<Path>) -> Result<Vec<ScenarioTemplate>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scenarios.json"), templates_json())?;
    let (initial, updated) = worked_example_xml();
    std::fs::write(dir.join("worked-initial.xml"), initial)?;
    std::fs::write(dir.join("worked-updated.xml"), updated)?;
    Ok(scenario_templates())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_layout() {
        let nscr = generate(&DatasetSpec::new(DatasetKind::Synthetic, 25, 1)).unwrap();
        assert_eq!(nscr.len(), 405);
        assert_eq!(nscr.vulnerable_count(), 25);
        let changed = nscr.entries().iter().filter(|e| e.has_change()).count();
        assert_eq!(changed, 72 + 25);
        assert_eq!(nscr.len() - changed, 308);
    }

    #[test]
    fn real_layout_without_vulnerable() {
        let nscr = generate(&DatasetSpec::new(DatasetKind::Real, 0, 2)).unwrap();
        let changed = nscr.entries().iter().filter(|e| e.has_change()).count();
        assert_eq!((changed, nscr.len() - changed), (10, 395));
        assert_eq!(nscr.vulnerable_count(), 0);
    }

    #[test]
    fn unique_addresses_and_reproducible() {
        let spec = DatasetSpec::new(DatasetKind::Realistic, 50, 3);
        let a = generate(&spec).unwrap();
        let ips: HashSet<_> = a.entries().iter().map(|e| e.ip_updated).collect();
        assert_eq!(ips.len(), a.len());
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a, generate(&DatasetSpec { seed: 4, ..spec }).unwrap());
    }

    #[test]
    fn too_many_rows_rejected() {
        let spec = DatasetSpec {
            total: 50,
            ..DatasetSpec::new(DatasetKind::Synthetic, 10, 0)
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn geometric_mean_matches_target() {
        let p = truncated_geometric_p(FEED_MEAN_CHANGED_PORTS, FEED_MAX_CHANGED_PORTS);
        let mut rng = rng::seeded(0);
        let n = 40_000;
        let total: usize = (0..n).map(|_| sample_changed_ports(&mut rng, p, 13)).sum();
        assert!((total as f64 / n as f64 - 1.61).abs() < 0.03);
    }

    #[test]
    fn worked_example_round_trips() {
        let (a, b) = worked_example_xml();
        let a = scanmodel::ingest_scan(&a, PortState::Closed).unwrap();
        let b = scanmodel::ingest_scan(&b, PortState::Closed).unwrap();
        let nscr = hostmatch::compare_scans(&a, &b);
        assert_eq!(nscr.len(), 3);
        let row = |ip: [u8; 4]| {
            let i = nscr
                .entries()
                .iter()
                .position(|e| e.ip_initial == Some(Ipv4Addr::from(ip)))
                .unwrap();
            (nscr.entries()[i].ip_updated.unwrap(), nscr.label(i, &PortKey::tcp(445)).unwrap().to_string())
        };
        assert_eq!(row([10, 0, 1, 12]), (Ipv4Addr::new(10, 0, 2, 10), "OpenToFiltered".into()));
        assert_eq!(row([10, 0, 1, 13]), (Ipv4Addr::new(10, 0, 1, 13), "ClosedToOpen".into()));
        assert_eq!(row([10, 0, 1, 11]).0, Ipv4Addr::new(10, 0, 1, 111));
    }
}
