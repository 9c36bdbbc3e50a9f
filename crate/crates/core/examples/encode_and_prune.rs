//! One-hot encode a state-change report, before and after dropping
//! unchanged hosts.

use portdrift::datagen::{generate, DatasetKind, DatasetSpec};
use portdrift::encode::{one_hot, prune};

fn main() -> portdrift::Result<()> {
    let nscr = generate(&DatasetSpec::new(DatasetKind::Synthetic, 10, 3))?;
    let full = one_hot(&nscr)?;
    println!("full:   {} x {} ({} ports, 16 labels each)", full.n_rows(), full.n_cols(), nscr.ports().len());

    let pruned = prune(&nscr);
    let kept = one_hot(&pruned.kept)?;
    println!("pruned: {} x {} ({} unchanged hosts removed)", kept.n_rows(), kept.n_cols(), pruned.removed.len());

    let names = kept.column_names();
    let first = kept.row(0);
    let hot: Vec<&str> = first
        .iter()
        .zip(&names)
        .filter(|(v, _)| **v == 1.0)
        .map(|(_, n)| n.as_str())
        .filter(|n| !n.ends_with("ClosedToClosed"))
        .collect();
    println!("first kept host {:?}: {}", kept.row_hosts()[0].display_ip(), hot.join(" "));
    Ok(())
}
