//! Second pass over a results file: summaries, significance tests, timings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::Serialize;

use super::ResultRow;
use crate::error::{Error, Result};
use crate::mlcore::mann_whitney_u;
use crate::pipelines::Algorithm;

/// Significance level for pipeline comparisons.
pub const ALPHA: f64 = 0.05;

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Dc,
    Ms,
}

impl Metric {
    pub fn of(self, r: &ResultRow) -> Option<f64> {
        match self {
            Metric::Precision => Some(r.precision),
            Metric::Recall => r.recall,
            Metric::F1 => r.f1,
            Metric::Dc => r.dc.map(|v| v as f64),
            Metric::Ms => r.ms,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "precision" => Metric::Precision,
            "recall" => Metric::Recall,
            "f1" => Metric::F1,
            "dc" => Metric::Dc,
            "ms" | "time" => Metric::Ms,
            other => return Err(Error::param(format!("unknown metric {other:?}"))),
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Dc => "dc",
            Metric::Ms => "ms",
        };
        f.write_str(s)
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    /// Rows where the metric is defined.
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl Summary {
    fn of(rows: &[&ResultRow], metric: Metric) -> Self {
        let mut v: Vec<f64> = rows.iter().filter_map(|r| metric.of(r)).collect();
        // sorted before summing so the mean does not depend on row order
        let median = median(&mut v);
        Summary {
            n: v.len(),
            mean: mean(&v),
            median,
        }
    }
}

/// Summary of every row sharing (kind, algorithm, K, SC, pruning).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub kind: String,
    pub algo: Algorithm,
    pub k: Option<usize>,
    pub sc: Option<usize>,
    pub prune: bool,
    pub rows: usize,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    pub dc: Summary,
    pub ms: Summary,
}

type GroupKey = (String, Algorithm, Option<usize>, Option<usize>, bool);

pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.kind.clone(), r.algo, r.k, r.sc, r.prune))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((kind, algo, k, sc, prune), g)| Aggregate {
            kind,
            algo,
            k,
            sc,
            prune,
            rows: g.len(),
            precision: Summary::of(&g, Metric::Precision),
            recall: Summary::of(&g, Metric::Recall),
            f1: Summary::of(&g, Metric::F1),
            dc: Summary::of(&g, Metric::Dc),
            ms: Summary::of(&g, Metric::Ms),
        })
        .collect()
}

pub fn write_aggregates<W: Write>(aggs: &[Aggregate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "kind", "algo", "k", "sc", "prune", "rows", "precision_mean", "precision_median", "recall_mean",
        "recall_median", "f1_mean", "f1_median", "dc_mean", "dc_median", "ms_median",
    ])?;
    let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let o = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for a in aggs {
        w.write_record([
            a.kind.clone(),
            a.algo.to_string(),
            o(a.k),
            o(a.sc),
            a.prune.to_string(),
            a.rows.to_string(),
            f(a.precision.mean),
            f(a.precision.median),
            f(a.recall.mean),
            f(a.recall.median),
            f(a.f1.mean),
            f(a.f1.median),
            f(a.dc.mean),
            f(a.dc.median),
            f(a.ms.median),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Selects result rows; unset fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupFilter {
    pub algo: Option<Algorithm>,
    pub k: Option<usize>,
    pub sc: Option<usize>,
    pub prune: Option<bool>,
    pub kind: Option<String>,
}

impl GroupFilter {
    pub fn algo(algo: Algorithm) -> Self {
        GroupFilter {
            algo: Some(algo),
            ..Default::default()
        }
    }

    pub fn matches(&self, r: &ResultRow) -> bool {
        self.algo.is_none_or(|a| a == r.algo)
            && self.k.is_none_or(|k| Some(k) == r.k)
            && self.sc.is_none_or(|sc| Some(sc) == r.sc)
            && self.prune.is_none_or(|p| p == r.prune)
            && self.kind.as_ref().is_none_or(|k| *k == r.kind)
    }
}

/// `algo=sknn,k=15,sc=20,prune=true,kind=synthetic`; a bare word is the algorithm.
impl FromStr for GroupFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = GroupFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').unwrap_or(("algo", part));
            let bad = |e: &dyn fmt::Display| Error::param(format!("group filter {key}: {e}"));
            match key.trim() {
                "algo" | "algorithm" => f.algo = Some(value.trim().parse()?),
                "k" => f.k = Some(value.trim().parse().map_err(|e| bad(&e))?),
                "sc" => f.sc = Some(value.trim().parse().map_err(|e| bad(&e))?),
                "prune" | "pruning" => f.prune = Some(value.trim().parse().map_err(|e| bad(&e))?),
                "kind" => f.kind = Some(value.trim().to_string()),
                other => return Err(Error::param(format!("unknown group filter key {other:?}"))),
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: Metric,
    pub n_a: usize,
    pub n_b: usize,
    pub median_a: f64,
    pub median_b: f64,
    pub u: f64,
    pub p: f64,
    pub exact: bool,
    pub significant: bool,
}

/// Two-sided Mann-Whitney test of `metric` between two row groups. Rows
/// where the metric is undefined are left out.
pub fn compare_pipelines(
    rows: &[ResultRow],
    metric: Metric,
    a: &GroupFilter,
    b: &GroupFilter,
) -> Result<Comparison> {
    let values = |g: &GroupFilter| -> Vec<f64> { rows.iter().filter(|r| g.matches(r)).filter_map(|r| metric.of(r)).collect() };
    let (mut va, mut vb) = (values(a), values(b));
    if va.is_empty() || vb.is_empty() {
        return Err(Error::param(format!(
            "comparison needs rows in both groups ({} vs {} with {metric} defined)",
            va.len(),
            vb.len()
        )));
    }
    let t = mann_whitney_u(&va, &vb)?;
    Ok(Comparison {
        metric,
        n_a: va.len(),
        n_b: vb.len(),
        median_a: median(&mut va).expect("non-empty"),
        median_b: median(&mut vb).expect("non-empty"),
        u: t.u,
        p: t.p,
        exact: t.exact,
        significant: t.p < ALPHA,
    })
}

/// Effect of pruning on one (algorithm, K, SC) pipeline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruningComparison {
    pub algo: Algorithm,
    pub k: Option<usize>,
    pub sc: Option<usize>,
    pub f1: Option<Comparison>,
    pub dc: Option<Comparison>,
    pub ms: Option<Comparison>,
}

/// Pruned against unpruned runs for every pipeline present in both forms.
/// Group `a` is the pruned one.
pub fn pruning_comparison(rows: &[ResultRow]) -> Vec<PruningComparison> {
    let mut pipelines: BTreeMap<(Algorithm, Option<usize>, Option<usize>), [bool; 2]> = BTreeMap::new();
    for r in rows {
        pipelines.entry((r.algo, r.k, r.sc)).or_default()[r.prune as usize] = true;
    }
    pipelines
        .into_iter()
        .filter(|(_, seen)| seen[0] && seen[1])
        .map(|((algo, k, sc), _)| {
            let side = |prune: bool| {
                let subset: Vec<ResultRow> = rows
                    .iter()
                    .filter(|r| r.algo == algo && r.k == k && r.sc == sc && r.prune == prune)
                    .cloned()
                    .collect();
                subset
            };
            let both: Vec<ResultRow> = side(true).into_iter().chain(side(false)).collect();
            let with = GroupFilter {
                prune: Some(true),
                ..Default::default()
            };
            let without = GroupFilter {
                prune: Some(false),
                ..Default::default()
            };
            let cmp = |m| compare_pipelines(&both, m, &with, &without).ok();
            PruningComparison {
                algo,
                k,
                sc,
                f1: cmp(Metric::F1),
                dc: cmp(Metric::Dc),
                ms: cmp(Metric::Ms),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

impl StageTiming {
    pub fn new(stage: &str, ms: f64) -> Self {
        StageTiming {
            stage: stage.to_string(),
            ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageStats {
    pub stage: String,
    pub n: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TimingReport {
    pub stages: Vec<StageStats>,
}

/// Per-stage median, minimum and maximum over repeated runs, in first-seen
/// stage order.
pub fn timing_report(runs: &[Vec<StageTiming>]) -> TimingReport {
    let mut order: Vec<String> = Vec::new();
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in runs.iter().flatten() {
        if !samples.contains_key(&t.stage) {
            order.push(t.stage.clone());
        }
        samples.entry(t.stage.clone()).or_default().push(t.ms);
    }
    let stages = order
        .into_iter()
        .map(|stage| {
            let mut v = samples.remove(&stage).unwrap_or_default();
            let median_ms = median(&mut v).unwrap_or(0.0);
            StageStats {
                n: v.len(),
                median_ms,
                min_ms: v[0],
                max_ms: v[v.len() - 1],
                stage,
            }
        })
        .collect();
    TimingReport { stages }
}

impl TimingReport {
    pub fn total_median_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.median_ms).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "n", "median_ms", "min_ms", "max_ms"])?;
        for s in &self.stages {
            w.write_record([
                s.stage.clone(),
                s.n.to_string(),
                format!("{:.3}", s.median_ms),
                format!("{:.3}", s.min_ms),
                format!("{:.3}", s.max_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>5} {:>12} {:>12} {:>12}", "stage", "n", "median ms", "min ms", "max ms")?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<12} {:>5} {:>12.3} {:>12.3} {:>12.3}",
                s.stage, s.n, s.median_ms, s.min_ms, s.max_ms
            )?;
        }
        write!(f, "{:<12} {:>5} {:>12.3}", "total", "", self.total_median_ms())
    }
}
