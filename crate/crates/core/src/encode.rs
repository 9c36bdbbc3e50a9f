//! One-hot encoding of state-change reports, and pruning of unchanged hosts.

use std::io::Write;
use std::net::Ipv4Addr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::hostmatch::{Nscr, NscrEntry, StateChangeLabel};
use crate::scanmodel::PortKey;

/// Identifies the report row a matrix row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HostRef {
    /// Index into the report that was encoded.
    pub index: usize,
    pub ip_initial: Option<Ipv4Addr>,
    pub ip_updated: Option<Ipv4Addr>,
}

impl HostRef {
    pub fn display_ip(&self) -> Option<Ipv4Addr> {
        self.ip_updated.or(self.ip_initial)
    }
}

/// Rows are hosts; columns are (port, label) pairs, 16 per port, ordered by
/// port then label index (`from` outer, `to` inner).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    ports: Vec<PortKey>,
    values: Array2<f64>,
    row_hosts: Vec<HostRef>,
}

impl FeatureMatrix {
    pub fn ports(&self) -> &[PortKey] {
        &self.ports
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn row_hosts(&self) -> &[HostRef] {
        &self.row_hosts
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, c: usize) -> (PortKey, StateChangeLabel) {
        let label = StateChangeLabel::from_index(c % StateChangeLabel::COUNT).expect("label index");
        (self.ports[c / StateChangeLabel::COUNT], label)
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.n_cols())
            .map(|c| {
                let (p, l) = self.column(c);
                format!("{p}__{l}")
            })
            .collect()
    }

    /// Matrix restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ports: self.ports.clone(),
            values: self.values.select(ndarray::Axis(0), rows),
            row_hosts: rows.iter().map(|&r| self.row_hosts[r]).collect(),
        }
    }

    /// CSV with one `<proto>_<port>__<Label>` column per feature and 0/1 cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.column_names())?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| if *v == 0.0 { "0" } else { "1" }))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn one_hot(nscr: &Nscr) -> Result<FeatureMatrix> {
    if nscr.is_empty() {
        return Err(Error::param("cannot encode an empty report"));
    }
    let width = nscr.ports().len() * StateChangeLabel::COUNT;
    let mut values = Array2::zeros((nscr.len(), width));
    for (r, e) in nscr.entries().iter().enumerate() {
        for (p, label) in e.labels.iter().enumerate() {
            values[[r, p * StateChangeLabel::COUNT + label.index()]] = 1.0;
        }
    }
    let row_hosts = nscr
        .entries()
        .iter()
        .enumerate()
        .map(|(index, e)| HostRef {
            index,
            ip_initial: e.ip_initial,
            ip_updated: e.ip_updated,
        })
        .collect();
    Ok(FeatureMatrix {
        ports: nscr.ports().to_vec(),
        values,
        row_hosts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pruned {
    /// Hosts with at least one state change, in input order; same ports as the input.
    pub kept: Nscr,
    /// Positions of the kept rows in the input report.
    pub kept_index: Vec<usize>,
    pub removed: Vec<NscrEntry>,
}

/// Drops every host whose ports all kept their state.
pub fn prune(nscr: &Nscr) -> Pruned {
    let mut kept = Vec::new();
    let mut kept_index = Vec::new();
    let mut removed = Vec::new();
    for (i, e) in nscr.entries().iter().enumerate() {
        if e.has_change() {
            kept.push(e.clone());
            kept_index.push(i);
        } else {
            removed.push(e.clone());
        }
    }
    Pruned {
        kept: nscr.with_entries(kept).expect("rows taken from a valid report"),
        kept_index,
        removed,
    }
}
