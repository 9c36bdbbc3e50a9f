//! Command-line verbs and the HTTP session API.
//!
//! Both front ends are thin: they parse input, call the library and render
//! results. Triage state lives in [`TriageSession`]; the views here only
//! reshape it for display.

pub mod cli;
pub mod http;

use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hostmatch::{Nscr, StateChangeLabel};
use crate::pipelines::{ClusterTag, Ranking, RankedHost};
use crate::scanmodel::{MacAddr, PortKey};
use crate::triage::TriageSession;

/// One changed port of a host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortChange {
    pub port: PortKey,
    pub label: StateChangeLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostView {
    pub ip_initial: Option<Ipv4Addr>,
    pub ip_updated: Option<Ipv4Addr>,
    pub mac: Option<MacAddr>,
    /// Ports whose state changed; unchanged ports are left out.
    pub changes: Vec<PortChange>,
}

impl HostView {
    pub fn of(nscr: &Nscr, entry: usize) -> Self {
        let e = &nscr.entries()[entry];
        HostView {
            ip_initial: e.ip_initial,
            ip_updated: e.ip_updated,
            mac: e.mac,
            changes: nscr
                .ports()
                .iter()
                .zip(&e.labels)
                .filter(|(_, l)| l.is_change())
                .map(|(p, l)| PortChange { port: *p, label: *l })
                .collect(),
        }
    }
}

/// Payload of the host awaiting a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextView {
    pub rank: usize,
    pub host: HostView,
    pub anomaly_score: Option<f64>,
    pub consecutive_fp: usize,
    pub sc: Option<usize>,
    pub stopped: bool,
    pub inspected: usize,
    pub n_hosts: usize,
}

impl NextView {
    /// `None` once the session has stopped.
    pub fn of(session: &TriageSession, nscr: &Nscr) -> Option<Self> {
        let h = session.next()?;
        Some(NextView {
            rank: h.rank,
            host: HostView::of(nscr, h.entry),
            anomaly_score: h.anomaly_score,
            consecutive_fp: session.consecutive_fp(),
            sc: session.sc(),
            stopped: session.stopped(),
            inspected: session.inspected(),
            n_hosts: session.ranking().len(),
        })
    }
}

/// A ranked host with its full label row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub entry: usize,
    pub ip_initial: Option<Ipv4Addr>,
    pub ip_updated: Option<Ipv4Addr>,
    pub mac: Option<MacAddr>,
    pub anomaly_score: Option<f64>,
    pub cluster: Option<ClusterTag>,
    pub flagged: Option<bool>,
    /// Aligned with [`RankingView::ports`].
    pub labels: Vec<StateChangeLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingView {
    pub ports: Vec<PortKey>,
    pub hosts: Vec<RankedRow>,
}

impl RankingView {
    pub fn of(hosts: &[RankedHost], nscr: &Nscr) -> Self {
        RankingView {
            ports: nscr.ports().to_vec(),
            hosts: hosts
                .iter()
                .map(|h| {
                    let e = &nscr.entries()[h.entry];
                    RankedRow {
                        rank: h.rank,
                        entry: h.entry,
                        ip_initial: h.ip_initial,
                        ip_updated: h.ip_updated,
                        mac: e.mac,
                        anomaly_score: h.anomaly_score,
                        cluster: h.cluster,
                        flagged: h.flagged,
                        labels: e.labels.clone(),
                    }
                })
                .collect(),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn score(v: Option<f64>) -> String {
    v.map(|s| format!("{s:.6}")).unwrap_or_default()
}

/// Ranked report as CSV: ranking columns followed by the full label row.
pub fn write_ranking_csv<W: Write>(ranking: &Ranking, nscr: &Nscr, out: W) -> Result<()> {
    let with_truth = nscr.has_ground_truth();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "rank", "ip_initial", "ip_updated", "mac", "anomaly_score", "cluster", "cluster_size", "flagged",
    ]
    .map(String::from)
    .to_vec();
    header.extend(nscr.ports().iter().map(PortKey::to_string));
    if with_truth {
        header.push("vulnerable".into());
    }
    w.write_record(&header)?;
    for h in &ranking.hosts {
        let e = &nscr.entries()[h.entry];
        let mut rec = vec![
            h.rank.to_string(),
            opt(h.ip_initial),
            opt(h.ip_updated),
            opt(e.mac),
            score(h.anomaly_score),
            opt(h.cluster.map(|c| c.id)),
            opt(h.cluster.map(|c| c.size)),
            opt(h.flagged),
        ];
        rec.extend(e.labels.iter().map(StateChangeLabel::to_string));
        if with_truth {
            rec.push(opt(e.vulnerable));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Terminal table: one line per host with its changed ports.
pub fn ranking_table(ranking: &Ranking, nscr: &Nscr) -> String {
    let mut out = format!(
        "{:>5}  {:<15}  {:<15}  {:>10}  {:>7}  changes\n",
        "rank", "ip_initial", "ip_updated", "score", "cluster"
    );
    for h in &ranking.hosts {
        let view = HostView::of(nscr, h.entry);
        let changes: Vec<String> = view.changes.iter().map(|c| format!("{}:{}", c.port, c.label)).collect();
        let mark = match h.flagged {
            Some(true) => "*",
            _ => "",
        };
        out.push_str(&format!(
            "{:>5}  {:<15}  {:<15}  {:>10}  {:>7}  {}{}\n",
            h.rank,
            opt(h.ip_initial),
            opt(h.ip_updated),
            score(h.anomaly_score),
            opt(h.cluster.map(|c| c.id)),
            mark,
            if changes.is_empty() { "-".to_string() } else { changes.join(" ") },
        ));
    }
    out
}
