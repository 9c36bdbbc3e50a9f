//! Pairing hosts of two scans and describing how each host's ports changed.
//!
//! Hosts can be renumbered or re-addressed between two scans, so pairing by
//! IP alone misattributes port changes. Every (initial, updated) pair gets a
//! matching score built from three parts:
//!
//! | part          | value                                                        |
//! |---------------|--------------------------------------------------------------|
//! | `score_ip`    | 0.2 when the IPs are equal                                   |
//! | `score_mac`   | 0.2 when both MACs are known and equal                       |
//! | `score_ports` | 0.6 × share of equal states over ports not closed on a side  |
//!
//! Pairs are then accepted greedily from the highest score down. Hosts left
//! over on either side are reported as added or removed.

mod nscr;

use std::cmp::Ordering;
use std::net::Ipv4Addr;

use rayon::prelude::*;
use serde::Serialize;

use crate::scanmodel::{HostScan, PortKey, PortState, ScanDataset};

pub use nscr::{
    build_nscr, read_nscr, read_nscr_from, write_nscr, write_nscr_to, Nscr, NscrEntry,
    StateChangeLabel,
};

pub const IP_WEIGHT: f64 = 0.2;
pub const MAC_WEIGHT: f64 = 0.2;
pub const PORTS_WEIGHT: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchScore {
    pub score_ip: f64,
    pub score_mac: f64,
    pub score_ports: f64,
    pub total: f64,
}

/// Correspondence between the two scans for one host.
#[derive(Clone, Debug, PartialEq)]
pub enum MatchedPair {
    Matched {
        initial: HostScan,
        updated: HostScan,
        score: MatchScore,
    },
    /// Present only in the initial scan.
    Removed(HostScan),
    /// Present only in the updated scan.
    Added(HostScan),
}

impl MatchedPair {
    pub fn initial(&self) -> Option<&HostScan> {
        match self {
            MatchedPair::Matched { initial, .. } | MatchedPair::Removed(initial) => Some(initial),
            MatchedPair::Added(_) => None,
        }
    }

    pub fn updated(&self) -> Option<&HostScan> {
        match self {
            MatchedPair::Matched { updated, .. } | MatchedPair::Added(updated) => Some(updated),
            MatchedPair::Removed(_) => None,
        }
    }

    pub fn score(&self) -> Option<&MatchScore> {
        match self {
            MatchedPair::Matched { score, .. } => Some(score),
            _ => None,
        }
    }
}

pub fn matching_score(a: &HostScan, b: &HostScan) -> MatchScore {
    let na: Vec<_> = a.non_closed().collect();
    let nb: Vec<_> = b.non_closed().collect();
    score_sparse(a, b, &na, &nb)
}

fn score_sparse(
    a: &HostScan,
    b: &HostScan,
    na: &[(PortKey, PortState)],
    nb: &[(PortKey, PortState)],
) -> MatchScore {
    let score_ip = if a.ip == b.ip { IP_WEIGHT } else { 0.0 };
    let score_mac = match (a.mac, b.mac) {
        (Some(x), Some(y)) if x == y => MAC_WEIGHT,
        _ => 0.0,
    };
    let (equal, considered) = compare_non_closed(na, nb);
    let score_ports = if considered == 0 {
        PORTS_WEIGHT
    } else {
        // ratio first: equal rationals give bit-identical scores
        PORTS_WEIGHT * (equal as f64 / considered as f64)
    };
    MatchScore {
        score_ip,
        score_mac,
        score_ports,
        total: score_ip + score_mac + score_ports,
    }
}

/// Merge of two port-sorted non-closed lists: (ports with equal state, ports considered).
fn compare_non_closed(a: &[(PortKey, PortState)], b: &[(PortKey, PortState)]) -> (usize, usize) {
    let (mut i, mut j) = (0, 0);
    let (mut equal, mut union) = (0, 0);
    while i < a.len() && j < b.len() {
        union += 1;
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                if a[i].1 == b[j].1 {
                    equal += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    union += (a.len() - i) + (b.len() - j);
    (equal, union)
}

/// Greedy score-maximizing pairing of the entries of two scans.
///
/// All n×m pairs are scored and visited by descending total (ties by
/// `(initial ip, updated ip)`); a pair is accepted when neither of its IPs has
/// been consumed yet. Unconsumed entries become [`MatchedPair::Removed`] or
/// [`MatchedPair::Added`]. Output order: accepted pairs in acceptance order,
/// then removed hosts, then added hosts, each by IP.
pub fn greedy_match(initial: &ScanDataset, updated: &ScanDataset) -> Vec<MatchedPair> {
    let ini = sorted_by_ip(initial.entries());
    let upd = sorted_by_ip(updated.entries());
    let ini_nc: Vec<Vec<_>> = ini.iter().map(|h| h.non_closed().collect()).collect();
    let upd_nc: Vec<Vec<_>> = upd.iter().map(|h| h.non_closed().collect()).collect();

    let mut candidates: Vec<(f64, usize, usize)> = (0..ini.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (ini, upd, ini_nc, upd_nc) = (&ini, &upd, &ini_nc, &upd_nc);
            (0..upd.len()).map(move |j| {
                (score_sparse(ini[i], upd[j], &ini_nc[i], &upd_nc[j]).total, i, j)
            })
        })
        .collect();
    // entries are ip-sorted, so index order is the ip tie-break
    candidates.par_sort_unstable_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut used_ini = vec![false; ini.len()];
    let mut used_upd = vec![false; upd.len()];
    let mut remaining = ini.len().min(upd.len());
    let mut pairs = Vec::with_capacity(ini.len().max(upd.len()));
    for &(_, i, j) in &candidates {
        if remaining == 0 {
            break;
        }
        if used_ini[i] || used_upd[j] {
            continue;
        }
        used_ini[i] = true;
        used_upd[j] = true;
        remaining -= 1;
        pairs.push(MatchedPair::Matched {
            initial: ini[i].clone(),
            updated: upd[j].clone(),
            score: score_sparse(ini[i], upd[j], &ini_nc[i], &upd_nc[j]),
        });
    }
    pairs.extend(
        ini.iter()
            .zip(&used_ini)
            .filter(|(_, used)| !**used)
            .map(|(h, _)| MatchedPair::Removed((*h).clone())),
    );
    pairs.extend(
        upd.iter()
            .zip(&used_upd)
            .filter(|(_, used)| !**used)
            .map(|(h, _)| MatchedPair::Added((*h).clone())),
    );
    pairs
}

fn sorted_by_ip(entries: &[HostScan]) -> Vec<&HostScan> {
    let mut v: Vec<&HostScan> = entries.iter().collect();
    v.sort_by_key(|h| h.ip);
    v
}

/// Matching plus report construction in one call.
pub fn compare_scans(initial: &ScanDataset, updated: &ScanDataset) -> Nscr {
    build_nscr(&greedy_match(initial, updated))
}

/// IP pairs of a matching, `None` marking the absent side.
pub fn correspondence(pairs: &[MatchedPair]) -> Vec<(Option<Ipv4Addr>, Option<Ipv4Addr>)> {
    let mut v: Vec<_> = pairs
        .iter()
        .map(|p| (p.initial().map(|h| h.ip), p.updated().map(|h| h.ip)))
        .collect();
    v.sort();
    v
}
