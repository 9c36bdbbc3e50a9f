//! Parse a scanner XML report into a per-host port table and print it as CSV.
//!
//! `cargo run --example ingest_nmap [scan.xml]`; without an argument the
//! bundled worked example is used.

use portdrift::datagen::worked_example_xml;
use portdrift::scanmodel::{ingest_scan, write_dataset_to, PortState};

fn main() -> portdrift::Result<()> {
    let xml = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => worked_example_xml().0,
    };
    let scan = ingest_scan(&xml, PortState::Closed)?;
    eprintln!("{} hosts over {} ports", scan.len(), scan.port_universe().len());
    for host in scan.entries() {
        let open: Vec<String> = host.non_closed().map(|(p, s)| format!("{p}={}", s.token())).collect();
        eprintln!("  {:<15} {}", host.ip, open.join(" "));
    }
    write_dataset_to(&scan, std::io::stdout().lock())
}
