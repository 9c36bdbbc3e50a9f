//! Scan pairs behind a report, and address mutation for matching experiments.

use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;

use rand::seq::index;

use super::{unique_ips, unique_macs};
use crate::error::{Error, Result};
use crate::hostmatch::{self, MatchedPair, Nscr};
use crate::rng;
use crate::scanmodel::{HostScan, MacAddr, PortKey, PortState, ScanDataset};

/// Pool of high TCP ports used as per-host service fingerprints.
pub const FINGERPRINT_PORTS: std::ops::Range<u16> = 10_000..10_064;
const FINGERPRINT_SIZE: usize = 4;

/// Reconstructs the two scans a report describes. Each host additionally
/// keeps a distinct set of four fingerprint services open on both sides, the
/// way real hosts differ in the services they run; this is what lets a host
/// be recognised after both of its addresses change.
pub fn scan_pair_from_nscr(nscr: &Nscr, seed: u64) -> Result<(ScanDataset, ScanDataset)> {
    let mut rng = rng::split(seed, 0xf1);
    let pool: Vec<PortKey> = FINGERPRINT_PORTS.map(PortKey::tcp).collect();
    let mut used = HashSet::new();
    let spare_macs = unique_macs(nscr.len(), &mut rng);
    let (mut initial, mut updated) = (Vec::new(), Vec::new());
    for (i, e) in nscr.entries().iter().enumerate() {
        let fingerprint = loop {
            let mut pick = index::sample(&mut rng, pool.len(), FINGERPRINT_SIZE).into_vec();
            pick.sort_unstable();
            if used.insert(pick.clone()) {
                break pick;
            }
        };
        let mac = e.mac.or(Some(spare_macs[i]));
        let build = |ip: Ipv4Addr, side: fn(&hostmatch::StateChangeLabel) -> PortState| {
            let mut h = HostScan::new(ip, mac);
            for (p, l) in nscr.ports().iter().zip(&e.labels) {
                h.ports.insert(*p, side(l));
            }
            for &f in &fingerprint {
                h.ports.insert(pool[f], PortState::Open);
            }
            h
        };
        if let Some(ip) = e.ip_initial {
            initial.push(build(ip, |l| l.from));
        }
        if let Some(ip) = e.ip_updated {
            updated.push(build(ip, |l| l.to));
        }
    }
    Ok((
        ScanDataset::new("initial", initial)?,
        ScanDataset::new("updated", updated)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MutationSpec {
    pub n_ip: usize,
    pub n_mac: usize,
    /// Change IP and MAC of the same `n_ip` hosts instead of disjoint samples.
    pub both: bool,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Mutation {
    pub initial: ScanDataset,
    pub updated: ScanDataset,
    /// (initial IP, updated IP) for every host present on both sides.
    pub correspondence: Vec<(Ipv4Addr, Ipv4Addr)>,
    /// Report a perfect matcher produces.
    pub expected: Nscr,
}

/// Gives sampled hosts of the updated scan fresh addresses. Hosts are
/// identified across the two scans by their (unmutated) IP.
pub fn mutate_addresses(initial: &ScanDataset, updated: &ScanDataset, spec: &MutationSpec) -> Result<Mutation> {
    if spec.both && spec.n_mac > 0 {
        return Err(Error::param("with both=true only n_ip hosts are sampled; n_mac must be 0"));
    }
    let shared: Vec<Ipv4Addr> = updated
        .entries()
        .iter()
        .map(|h| h.ip)
        .filter(|ip| initial.get(*ip).is_some())
        .collect();
    let wanted = if spec.both { spec.n_ip } else { spec.n_ip + spec.n_mac };
    if wanted > shared.len() {
        return Err(Error::param(format!(
            "cannot sample {wanted} hosts from {} present in both scans",
            shared.len()
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let sample: Vec<Ipv4Addr> = index::sample(&mut rng, shared.len(), wanted)
        .into_iter()
        .map(|i| shared[i])
        .collect();
    let (ip_hosts, mac_hosts): (&[Ipv4Addr], &[Ipv4Addr]) = if spec.both {
        (&sample, &sample)
    } else {
        sample.split_at(spec.n_ip)
    };

    let taken_ips: HashSet<Ipv4Addr> = initial.entries().iter().chain(updated.entries()).map(|h| h.ip).collect();
    let taken_macs: HashSet<MacAddr> =
        initial.entries().iter().chain(updated.entries()).filter_map(|h| h.mac).collect();
    let fresh_ips: Vec<Ipv4Addr> = unique_ips(taken_ips.len() + ip_hosts.len(), &mut rng)
        .into_iter()
        .filter(|ip| !taken_ips.contains(ip))
        .take(ip_hosts.len())
        .collect();
    let fresh_macs: Vec<MacAddr> = unique_macs(taken_macs.len() + mac_hosts.len(), &mut rng)
        .into_iter()
        .filter(|m| !taken_macs.contains(m))
        .take(mac_hosts.len())
        .collect();
    if fresh_ips.len() < ip_hosts.len() || fresh_macs.len() < mac_hosts.len() {
        return Err(Error::Generation("address space exhausted".into()));
    }
    let new_ip: HashMap<Ipv4Addr, Ipv4Addr> = ip_hosts.iter().copied().zip(fresh_ips).collect();
    let new_mac: HashMap<Ipv4Addr, MacAddr> = mac_hosts.iter().copied().zip(fresh_macs).collect();

    let mutated: Vec<HostScan> = updated
        .entries()
        .iter()
        .map(|h| {
            let mut h = h.clone();
            if let Some(m) = new_mac.get(&h.ip) {
                h.mac = Some(*m);
            }
            if let Some(ip) = new_ip.get(&h.ip) {
                h.ip = *ip;
            }
            h
        })
        .collect();
    let mutated = ScanDataset::new(updated.label(), mutated)?;

    let mut pairs = Vec::new();
    let mut correspondence = Vec::new();
    for h in initial.entries() {
        match updated.get(h.ip) {
            Some(_) => {
                let to = new_ip.get(&h.ip).copied().unwrap_or(h.ip);
                let u = mutated.get(to).expect("mutated host present");
                correspondence.push((h.ip, to));
                pairs.push(MatchedPair::Matched {
                    initial: h.clone(),
                    updated: u.clone(),
                    score: hostmatch::matching_score(h, u),
                });
            }
            None => pairs.push(MatchedPair::Removed(h.clone())),
        }
    }
    for h in updated.entries().iter().filter(|h| initial.get(h.ip).is_none()) {
        pairs.push(MatchedPair::Added(h.clone()));
    }
    correspondence.sort();
    Ok(Mutation {
        initial: initial.clone(),
        updated: mutated,
        correspondence,
        expected: hostmatch::build_nscr(&pairs),
    })
}
