//! Human-in-the-loop inspection: stopping rule, live sessions and metrics.
//!
//! A session is an append-only list of verdict events over a fixed ranking.
//! Every derived quantity (cursor, consecutive false positives, stop flag,
//! report) is a fold over those events, so an exported log replays exactly.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipelines::RankedHost;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Stop after SC consecutive false positives.
    Selection,
    /// Inspect the whole ranking.
    Prioritization,
}

/// Whether the SC false positives that trigger the stop count toward precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpCounting {
    #[default]
    IncludeTerminal,
    ExcludeTerminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    /// Absent when the number of vulnerable hosts is unknown.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Rank of the last vulnerable host; prioritization mode only.
    pub dc: Option<usize>,
    pub inspected: usize,
    pub stopped: bool,
    /// Set when the data set holds no vulnerable host (recall is then 1).
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectionOptions {
    /// Vulnerable hosts in the whole data set; defaults to those in the ranking.
    pub total_vulnerable: Option<usize>,
    pub counting: FpCounting,
}

/// Consecutive-false-positive counter shared by batch runs and sessions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct StopRule {
    sc: Option<usize>,
    consecutive_fp: usize,
    tp: usize,
    fp: usize,
    inspected: usize,
    last_tp_rank: Option<usize>,
    stopped_by_sc: bool,
}

impl StopRule {
    fn new(sc: Option<usize>) -> Self {
        StopRule {
            sc,
            ..Default::default()
        }
    }

    fn push(&mut self, vulnerable: bool) {
        self.inspected += 1;
        if vulnerable {
            self.tp += 1;
            self.consecutive_fp = 0;
            self.last_tp_rank = Some(self.inspected);
        } else {
            self.fp += 1;
            self.consecutive_fp += 1;
        }
        if self.sc.is_some_and(|sc| self.consecutive_fp >= sc) {
            self.stopped_by_sc = true;
        }
    }

    fn report(&self, total_vulnerable: Option<usize>, counting: FpCounting, exhausted: bool) -> TriageReport {
        let fp = match counting {
            FpCounting::ExcludeTerminal if self.stopped_by_sc => self.fp - self.sc.unwrap_or(0),
            _ => self.fp,
        };
        let precision = ratio(self.tp, self.tp + fp);
        let recall = total_vulnerable.map(|total| if total == 0 { 1.0 } else { ratio(self.tp, total) });
        let f1 = recall.map(|r| {
            if precision + r == 0.0 {
                0.0
            } else {
                2.0 * precision * r / (precision + r)
            }
        });
        TriageReport {
            tp: self.tp,
            fp,
            precision,
            recall,
            f1,
            dc: if self.sc.is_none() { self.last_tp_rank } else { None },
            inspected: self.inspected,
            stopped: self.stopped_by_sc || exhausted,
            degenerate: total_vulnerable == Some(0),
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Simulates an engineer walking `ranking` with stopping condition `sc`;
/// recall is relative to the vulnerable hosts in the ranking.
pub fn run_selection<T>(ranking: &[T], sc: usize, oracle: impl Fn(&T) -> bool) -> Result<TriageReport> {
    run_selection_with(ranking, sc, oracle, &SelectionOptions::default())
}

pub fn run_selection_with<T>(
    ranking: &[T],
    sc: usize,
    oracle: impl Fn(&T) -> bool,
    opts: &SelectionOptions,
) -> Result<TriageReport> {
    if sc == 0 {
        return Err(Error::param("SC must be at least 1"));
    }
    let total = opts
        .total_vulnerable
        .unwrap_or_else(|| ranking.iter().filter(|h| oracle(h)).count());
    let mut rule = StopRule::new(Some(sc));
    for h in ranking {
        rule.push(oracle(h));
        if rule.stopped_by_sc {
            break;
        }
    }
    Ok(rule.report(Some(total), opts.counting, rule.inspected == ranking.len()))
}

/// Inspects exactly `hosts`, with no stopping rule (threshold baselines).
pub fn evaluate_prefix<T>(hosts: &[T], oracle: impl Fn(&T) -> bool, opts: &SelectionOptions) -> TriageReport {
    let total = opts
        .total_vulnerable
        .unwrap_or_else(|| hosts.iter().filter(|h| oracle(h)).count());
    let mut rule = StopRule::new(None);
    for h in hosts {
        rule.push(oracle(h));
    }
    let mut report = rule.report(Some(total), opts.counting, true);
    report.dc = None;
    report
}

/// Rank of the last vulnerable host: hosts inspected to find them all.
pub fn debugging_cost<T>(ranking: &[T], oracle: impl Fn(&T) -> bool) -> Result<usize> {
    ranking
        .iter()
        .rposition(oracle)
        .map(|i| i + 1)
        .ok_or(Error::UndefinedDebuggingCost)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub rank: usize,
    pub vulnerable: bool,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub sc: Option<usize>,
    pub mode: Mode,
    pub n_hosts: usize,
    #[serde(default)]
    pub total_vulnerable: Option<usize>,
    #[serde(default)]
    pub counting: FpCounting,
    pub events: Vec<VerdictEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub consecutive_fp: usize,
    pub stopped: bool,
    pub inspected: usize,
}

#[derive(Clone, Debug)]
pub struct TriageSession {
    ranking: Vec<RankedHost>,
    total_vulnerable: Option<usize>,
    counting: FpCounting,
    events: Vec<VerdictEvent>,
    rule: StopRule,
}

impl TriageSession {
    /// Selection mode when `sc` is given, prioritization otherwise.
    pub fn new(ranking: Vec<RankedHost>, sc: Option<usize>) -> Result<Self> {
        if sc == Some(0) {
            return Err(Error::param("SC must be at least 1"));
        }
        Ok(TriageSession {
            ranking,
            total_vulnerable: None,
            counting: FpCounting::default(),
            events: Vec::new(),
            rule: StopRule::new(sc),
        })
    }

    /// Makes recall and F1 available in reports.
    pub fn with_total_vulnerable(mut self, total: usize) -> Self {
        self.total_vulnerable = Some(total);
        self
    }

    pub fn with_counting(mut self, counting: FpCounting) -> Self {
        self.counting = counting;
        self
    }

    pub fn ranking(&self) -> &[RankedHost] {
        &self.ranking
    }

    pub fn sc(&self) -> Option<usize> {
        self.rule.sc
    }

    pub fn mode(&self) -> Mode {
        if self.rule.sc.is_some() {
            Mode::Selection
        } else {
            Mode::Prioritization
        }
    }

    pub fn consecutive_fp(&self) -> usize {
        self.rule.consecutive_fp
    }

    pub fn inspected(&self) -> usize {
        self.rule.inspected
    }

    pub fn stopped(&self) -> bool {
        self.rule.stopped_by_sc || self.rule.inspected >= self.ranking.len()
    }

    /// Host awaiting a verdict, if the session is still open.
    pub fn next(&self) -> Option<&RankedHost> {
        if self.stopped() {
            None
        } else {
            self.ranking.get(self.rule.inspected)
        }
    }

    pub fn events(&self) -> &[VerdictEvent] {
        &self.events
    }

    pub fn record_verdict(&mut self, vulnerable: bool) -> Result<VerdictOutcome> {
        let rank = self.rule.inspected + 1;
        self.record_verdict_at(rank, vulnerable, now_ms())
    }

    /// Records a verdict for an explicit rank; a rank other than the one
    /// awaiting a verdict is rejected as a stale submission.
    pub fn record_verdict_at(&mut self, rank: usize, vulnerable: bool, at_ms: u64) -> Result<VerdictOutcome> {
        if self.stopped() {
            return Err(Error::SessionClosed);
        }
        let expected = self.rule.inspected + 1;
        if rank != expected {
            return Err(Error::param(format!("verdict for rank {rank}, but rank {expected} is pending")));
        }
        self.rule.push(vulnerable);
        self.events.push(VerdictEvent { rank, vulnerable, at_ms });
        Ok(VerdictOutcome {
            consecutive_fp: self.rule.consecutive_fp,
            stopped: self.stopped(),
            inspected: self.rule.inspected,
        })
    }

    pub fn report(&self) -> TriageReport {
        self.rule.report(
            self.total_vulnerable,
            self.counting,
            self.rule.inspected >= self.ranking.len(),
        )
    }

    pub fn export_log(&self) -> SessionLog {
        SessionLog {
            sc: self.rule.sc,
            mode: self.mode(),
            n_hosts: self.ranking.len(),
            total_vulnerable: self.total_vulnerable,
            counting: self.counting,
            events: self.events.clone(),
        }
    }

    /// Rebuilds a session by re-applying a log's verdicts to `ranking`.
    pub fn replay(ranking: Vec<RankedHost>, log: &SessionLog) -> Result<Self> {
        if log.n_hosts != ranking.len() {
            return Err(Error::data(format!(
                "log covers {} hosts, ranking has {}",
                log.n_hosts,
                ranking.len()
            )));
        }
        let mut s = TriageSession::new(ranking, log.sc)?.with_counting(log.counting);
        s.total_vulnerable = log.total_vulnerable;
        for e in &log.events {
            s.record_verdict_at(e.rank, e.vulnerable, e.at_ms)?;
        }
        Ok(s)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
