//! Match hosts across two scans whose addresses drifted, then build the
//! state-change report.

use portdrift::datagen::{generate, mutate_addresses, scan_pair_from_nscr, DatasetKind, DatasetSpec, MutationSpec};
use portdrift::hostmatch::{build_nscr, correspondence, greedy_match};

fn main() -> portdrift::Result<()> {
    let report = generate(&DatasetSpec::new(DatasetKind::Real, 20, 1))?;
    let (initial, updated) = scan_pair_from_nscr(&report, 1)?;
    let drift = mutate_addresses(&initial, &updated, &MutationSpec { n_ip: 40, n_mac: 40, both: false, seed: 2 })?;

    let pairs = greedy_match(&drift.initial, &drift.updated);
    let found: Vec<_> = correspondence(&pairs)
        .into_iter()
        .filter_map(|(a, b)| Some((a?, b?)))
        .collect();
    let correct = drift.correspondence.iter().filter(|p| found.contains(p)).count();
    println!("{} hosts, 40 new IPs and 40 new MACs", drift.initial.len());
    println!("pairs recovered: {correct}/{}", drift.correspondence.len());

    let nscr = build_nscr(&pairs);
    let changed = nscr.entries().iter().filter(|e| e.has_change()).count();
    println!("report: {} rows, {changed} with a state change", nscr.len());
    println!("identical to the ground-truth report: {}", nscr == drift.expected);
    Ok(())
}
