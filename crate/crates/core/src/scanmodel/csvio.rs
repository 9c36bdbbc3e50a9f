//! Canonical dataset CSV: `ip,mac,<proto>_<port>,...` with state tokens in cells.

use std::fs::File;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use super::{HostScan, MacAddr, PortKey, PortState, ScanDataset};
use crate::error::{Error, Result};

pub fn write_dataset(ds: &ScanDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_to(ds, File::create(path)?)
}

pub fn write_dataset_to<W: Write>(ds: &ScanDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["ip".to_string(), "mac".to_string()];
    header.extend(ds.port_universe().iter().map(PortKey::to_string));
    w.write_record(&header)?;
    for e in ds.entries() {
        let mut rec = vec![e.ip.to_string(), e.mac.map(|m| m.to_string()).unwrap_or_default()];
        rec.extend(ds.port_universe().iter().map(|p| e.state(p).token().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset file; the dataset label is the file stem.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<ScanDataset> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset_from(Error::open(path)?, label)
}

pub fn read_dataset_from<R: Read>(input: R, label: impl Into<String>) -> Result<ScanDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("ip") || header.get(1) != Some("mac") {
        return Err(Error::Schema(
            "dataset header must start with `ip,mac`".to_string(),
        ));
    }
    let ports = header
        .iter()
        .skip(2)
        .map(str::parse::<PortKey>)
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let ip: Ipv4Addr = rec[0]
            .parse()
            .map_err(|_| Error::data(format!("row {row}: invalid IPv4 `{}`", &rec[0])))?;
        let mac = match &rec[1] {
            "" => None,
            m => Some(m.parse::<MacAddr>()?),
        };
        let mut host = HostScan::new(ip, mac);
        for (p, cell) in ports.iter().zip(rec.iter().skip(2)) {
            host.ports.insert(*p, cell.parse::<PortState>()?);
        }
        entries.push(host);
    }
    ScanDataset::new(label, entries)
}
