//! Matching accuracy as more hosts receive new addresses between scans.

use portdrift::datagen::{generate, mutate_addresses, scan_pair_from_nscr, DatasetKind, DatasetSpec, MutationSpec};
use portdrift::hostmatch::{correspondence, greedy_match};

fn main() -> portdrift::Result<()> {
    let report = generate(&DatasetSpec::new(DatasetKind::Real, 30, 5))?;
    let (initial, updated) = scan_pair_from_nscr(&report, 5)?;
    println!("{:>6} {:>6} {:>5} {:>9}", "ip", "mac", "both", "accuracy");
    for n in [0, 10, 40, 100, 200] {
        for both in [false, true] {
            let spec = MutationSpec { n_ip: n, n_mac: if both { 0 } else { n }, both, seed: n as u64 };
            let drift = mutate_addresses(&initial, &updated, &spec)?;
            let found = correspondence(&greedy_match(&drift.initial, &drift.updated));
            let hits = drift
                .correspondence
                .iter()
                .filter(|(a, b)| found.contains(&(Some(*a), Some(*b))))
                .count();
            let acc = hits as f64 / drift.correspondence.len() as f64;
            println!("{n:>6} {:>6} {both:>5} {acc:>9.3}", spec.n_mac);
        }
    }
    Ok(())
}
