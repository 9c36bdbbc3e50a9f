//! Prioritizers that turn an encoded report into an inspection order.
//!
//! Sorted pipelines (SKNN, SIF, SKM, SHAC) return a full order. The threshold
//! baselines (LOF, IF) flag a subset; flagged hosts come first, by score, and
//! the rest follow in input order so every pipeline yields a total order.

use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encode::{self, FeatureMatrix};
use crate::error::{Error, Result};
use crate::hostmatch::Nscr;
use crate::mlcore::{self, DistanceMatrix, KCandidate, KMeansClusterer, WardClusterer};
use crate::rng;
use crate::triage::{self, TriageReport};

/// LOF baseline flags hosts whose average K-nearest distance exceeds this.
pub const LOF_THRESHOLD: f64 = 1.5;
/// IF baseline flags hosts whose isolation score exceeds this.
pub const IF_THRESHOLD: f64 = 0.5;
pub const IFOREST_TREES: usize = 100;
pub const IFOREST_SUBSAMPLE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Sknn,
    Sif,
    Skm,
    Shac,
    Lof,
    If,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Sknn,
        Algorithm::Sif,
        Algorithm::Skm,
        Algorithm::Shac,
        Algorithm::Lof,
        Algorithm::If,
    ];

    pub fn uses_k(self) -> bool {
        matches!(self, Algorithm::Sknn | Algorithm::Lof)
    }

    /// Threshold selectors rather than sorters.
    pub fn is_baseline(self) -> bool {
        matches!(self, Algorithm::Lof | Algorithm::If)
    }

    pub fn token(self) -> &'static str {
        match self {
            Algorithm::Sknn => "sknn",
            Algorithm::Sif => "sif",
            Algorithm::Skm => "skm",
            Algorithm::Shac => "shac",
            Algorithm::Lof => "lof",
            Algorithm::If => "if",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.token().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::param(format!("unknown algorithm `{s}`")))
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.token().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, alias = "prune")]
    pub pruning: bool,
    #[serde(alias = "algo")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub sc: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(
        algorithm: Algorithm,
        k: Option<usize>,
        sc: Option<usize>,
        pruning: bool,
        seed: u64,
    ) -> Result<Self> {
        let cfg = PipelineConfig {
            pruning,
            algorithm,
            k,
            sc,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.algorithm.uses_k(), self.k) {
            (true, None) => {
                return Err(Error::param(format!("{} needs K", self.algorithm)));
            }
            (true, Some(0)) => return Err(Error::param("K must be at least 1")),
            (false, Some(_)) => {
                return Err(Error::param(format!("{} takes no K", self.algorithm)));
            }
            _ => {}
        }
        if self.sc == Some(0) {
            return Err(Error::param("SC must be at least 1"));
        }
        Ok(())
    }

    /// SKNN with K=15, pruning, SC=20.
    pub fn sknn15_sc20(seed: u64) -> Self {
        PipelineConfig {
            pruning: true,
            algorithm: Algorithm::Sknn,
            k: Some(15),
            sc: Some(20),
            seed,
        }
    }

    /// SKNN with K=20, pruning, SC=20.
    pub fn sknn20_sc20(seed: u64) -> Self {
        PipelineConfig {
            k: Some(20),
            ..Self::sknn15_sc20(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sknn15-sc20" | "sknn-15-sc20" | "best" => Some(Self::sknn15_sc20(seed)),
            "sknn20-sc20" | "sknn-20-sc20" => Some(Self::sknn20_sc20(seed)),
            _ => None,
        }
    }

    /// Short name such as `SKNN-15` or `SHAC`.
    pub fn name(&self) -> String {
        let algo = self.algorithm.token().to_ascii_uppercase();
        match self.k {
            Some(k) => format!("{algo}-{k}"),
            None => algo,
        }
    }

    /// Parses JSON (when the text starts with `{`) or `key=value` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = if text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| Error::Schema(format!("{}: {}", e.path(), e.inner())))?
        } else {
            Self::parse_key_values(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn parse_key_values(text: &str) -> Result<Self> {
        let mut algorithm = None;
        let mut cfg = PipelineConfig {
            pruning: false,
            algorithm: Algorithm::Sknn,
            k: None,
            sc: None,
            seed: 0,
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Schema(format!("line {}: invalid {what} `{value}`", n + 1));
            match key {
                "pruning" | "prune" => cfg.pruning = parse_bool(value).ok_or_else(|| bad("boolean"))?,
                "algorithm" | "algo" => algorithm = Some(value.parse::<Algorithm>()?),
                "k" | "K" => cfg.k = Some(value.parse().map_err(|_| bad("K"))?),
                "sc" | "SC" => cfg.sc = Some(value.parse().map_err(|_| bad("SC"))?),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                other => return Err(Error::Schema(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        cfg.algorithm = algorithm.ok_or_else(|| Error::Schema("missing `algorithm`".into()))?;
        Ok(cfg)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTag {
    pub id: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedHost {
    /// 1-based inspection position.
    pub rank: usize,
    /// Index of the host in the report the pipeline was given.
    pub entry: usize,
    pub ip_initial: Option<Ipv4Addr>,
    pub ip_updated: Option<Ipv4Addr>,
    pub anomaly_score: Option<f64>,
    pub cluster: Option<ClusterTag>,
    /// Baselines only: whether the host passed the threshold.
    pub flagged: Option<bool>,
}

impl RankedHost {
    pub fn display_ip(&self) -> Option<Ipv4Addr> {
        self.ip_updated.or(self.ip_initial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub degenerate: bool,
    pub candidates: Vec<KCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranking {
    pub algorithm: Algorithm,
    pub hosts: Vec<RankedHost>,
    /// Baselines: length of the flagged prefix.
    pub flagged: Option<usize>,
    pub clusters: Option<ClusterSummary>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    /// Entry indices in inspection order.
    pub fn order(&self) -> Vec<usize> {
        self.hosts.iter().map(|h| h.entry).collect()
    }
}

/// Ranks the rows of `x`. Pruning, if wanted, must already have been applied.
pub fn prioritize(x: &FeatureMatrix, cfg: &PipelineConfig) -> Result<Ranking> {
    cfg.validate()?;
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::data(format!("need at least 2 hosts to rank, got {n}")));
    }
    let values = x.values().view();
    let mut clusters = None;
    let mut flagged = None;
    let hosts = match cfg.algorithm {
        Algorithm::Sknn => {
            let scores = mlcore::knn_avg_distance(values, cfg.k.expect("validated"))?;
            by_score(x, &scores)
        }
        Algorithm::Sif => by_score(x, &forest_scores(x, cfg.seed)?),
        Algorithm::Lof | Algorithm::If => {
            let (scores, threshold) = if cfg.algorithm == Algorithm::Lof {
                (mlcore::knn_avg_distance(values, cfg.k.expect("validated"))?, LOF_THRESHOLD)
            } else {
                (forest_scores(x, cfg.seed)?, IF_THRESHOLD)
            };
            let (hosts, count) = thresholded(x, &scores, threshold);
            flagged = Some(count);
            hosts
        }
        Algorithm::Skm | Algorithm::Shac => {
            let d = DistanceMatrix::euclidean(values);
            let selection = if cfg.algorithm == Algorithm::Skm {
                mlcore::select_k(&d, &KMeansClusterer::new(values, cfg.seed), mlcore::DEFAULT_K_MAX)?
            } else {
                mlcore::select_k(&d, &WardClusterer::new(&d), mlcore::DEFAULT_K_MAX)?
            };
            let hosts = by_cluster(x, &selection.clustering, cfg.seed);
            clusters = Some(ClusterSummary {
                k: selection.k,
                degenerate: selection.degenerate,
                candidates: selection.candidates,
            });
            hosts
        }
    };
    Ok(Ranking {
        algorithm: cfg.algorithm,
        hosts,
        flagged,
        clusters,
    })
}

fn host(x: &FeatureMatrix, row: usize, rank: usize) -> RankedHost {
    let h = x.row_hosts()[row];
    RankedHost {
        rank,
        entry: h.index,
        ip_initial: h.ip_initial,
        ip_updated: h.ip_updated,
        anomaly_score: None,
        cluster: None,
        flagged: None,
    }
}

fn descending(scores: &[f64], rows: &mut [usize]) {
    rows.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
}

fn by_score(x: &FeatureMatrix, scores: &[f64]) -> Vec<RankedHost> {
    let mut rows: Vec<usize> = (0..scores.len()).collect();
    descending(scores, &mut rows);
    rows.iter()
        .enumerate()
        .map(|(i, &r)| RankedHost {
            anomaly_score: Some(scores[r]),
            ..host(x, r, i + 1)
        })
        .collect()
}

fn thresholded(x: &FeatureMatrix, scores: &[f64], threshold: f64) -> (Vec<RankedHost>, usize) {
    let (mut hit, miss): (Vec<usize>, Vec<usize>) =
        (0..scores.len()).partition(|&r| scores[r] > threshold);
    descending(scores, &mut hit);
    let count = hit.len();
    let hosts = hit
        .iter()
        .chain(&miss)
        .enumerate()
        .map(|(i, &r)| RankedHost {
            anomaly_score: Some(scores[r]),
            flagged: Some(i < count),
            ..host(x, r, i + 1)
        })
        .collect();
    (hosts, count)
}

/// Stable per-host identity so forest subsampling follows hosts, not positions.
fn host_id(x: &FeatureMatrix, row: usize) -> u64 {
    let h = x.row_hosts()[row];
    let part = |ip: Option<Ipv4Addr>| ip.map_or(0, |ip| u64::from(u32::from(ip)) + 1);
    rng::mix(part(h.ip_initial)) ^ part(h.ip_updated).rotate_left(29)
}

fn forest_scores(x: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
    let ids: Vec<u64> = (0..x.n_rows()).map(|r| host_id(x, r)).collect();
    let forest = mlcore::IsolationForest::fit_with_ids(
        x.values().view(),
        &ids,
        &mlcore::IsolationForestParams {
            trees: IFOREST_TREES,
            subsample: IFOREST_SUBSAMPLE.min(x.n_rows()),
            seed,
        },
    )?;
    Ok(forest.score_rows(x.values().view()))
}

/// Smaller clusters first; equal sizes by smallest member address, then id.
/// Members of a cluster are visited in a seeded random order.
fn by_cluster(x: &FeatureMatrix, c: &mlcore::Clustering, seed: u64) -> Vec<RankedHost> {
    let sizes = c.sizes();
    let mut groups: Vec<(usize, Vec<usize>)> = (0..c.k()).map(|id| (id, c.members(id))).collect();
    let smallest_ip = |rows: &[usize]| rows.iter().map(|&r| x.row_hosts()[r].display_ip()).min();
    groups.sort_by(|(ia, a), (ib, b)| {
        a.len()
            .cmp(&b.len())
            .then_with(|| smallest_ip(a).cmp(&smallest_ip(b)))
            .then(ia.cmp(ib))
    });
    let mut shuffle = rng::seeded(rng::derive_seed(seed, &[0x5348_5546]));
    let mut out = Vec::with_capacity(x.n_rows());
    for (id, mut members) in groups {
        members.shuffle(&mut shuffle);
        for r in members {
            let rank = out.len() + 1;
            out.push(RankedHost {
                cluster: Some(ClusterTag { id, size: sizes[id] }),
                ..host(x, r, rank)
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub prune: Duration,
    pub encode: Duration,
    pub prioritize: Duration,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    /// Entry indices refer to the report passed to [`run_pipeline`].
    pub ranking: Ranking,
    pub pruned: usize,
    pub timings: StageTimings,
}

/// Pruning (if configured), encoding and ranking of a full report.
pub fn run_pipeline(nscr: &Nscr, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let t = Instant::now();
    let (report, kept_index) = if cfg.pruning {
        let p = encode::prune(nscr);
        (std::borrow::Cow::Owned(p.kept), Some(p.kept_index))
    } else {
        (std::borrow::Cow::Borrowed(nscr), None)
    };
    let prune_time = t.elapsed();

    let t = Instant::now();
    if report.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 hosts to rank, {} left after pruning",
            report.len()
        )));
    }
    let x = encode::one_hot(&report)?;
    let encode_time = t.elapsed();

    let t = Instant::now();
    let mut ranking = prioritize(&x, cfg)?;
    let prioritize_time = t.elapsed();

    if let Some(kept) = &kept_index {
        for h in &mut ranking.hosts {
            h.entry = kept[h.entry];
        }
    }
    Ok(PipelineRun {
        ranking,
        pruned: nscr.len() - report.len(),
        timings: StageTimings {
            prune: prune_time,
            encode: encode_time,
            prioritize: prioritize_time,
        },
    })
}

/// Hosts-selection evaluation. Sorted pipelines stop on `cfg.sc` consecutive
/// false positives; baselines inspect exactly their flagged prefix.
/// `total_vulnerable` counts vulnerable hosts in the whole data set,
/// including any removed by pruning.
pub fn selected_subset(
    ranking: &Ranking,
    cfg: &PipelineConfig,
    oracle: impl Fn(&RankedHost) -> bool,
    total_vulnerable: usize,
) -> Result<TriageReport> {
    let opts = triage::SelectionOptions {
        total_vulnerable: Some(total_vulnerable),
        ..Default::default()
    };
    if let Some(flagged) = ranking.flagged {
        return Ok(triage::evaluate_prefix(&ranking.hosts[..flagged], oracle, &opts));
    }
    let sc = cfg
        .sc
        .ok_or_else(|| Error::param("hosts selection needs SC"))?;
    triage::run_selection_with(&ranking.hosts, sc, oracle, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hostmatch::{NscrEntry, StateChangeLabel};
    use crate::scanmodel::{PortKey, PortState::*};

    fn report(groups: &[(usize, &[StateChangeLabel])]) -> Nscr {
        let ports = vec![PortKey::tcp(22), PortKey::tcp(80), PortKey::tcp(443)];
        let mut entries = Vec::new();
        for (count, labels) in groups {
            for _ in 0..*count {
                let i = entries.len() as u32;
                let ip = Some(Ipv4Addr::from(0x0a00_0000 + i));
                entries.push(NscrEntry {
                    ip_initial: ip,
                    ip_updated: ip,
                    mac: None,
                    labels: labels.to_vec(),
                    vulnerable: None,
                });
            }
        }
        Nscr::new(ports, entries).unwrap()
    }

    const SAME: StateChangeLabel = StateChangeLabel { from: Open, to: Open };
    const CLOSED: StateChangeLabel = StateChangeLabel { from: Closed, to: Closed };
    const OPENED: StateChangeLabel = StateChangeLabel { from: Closed, to: Open };
    const FILTERED: StateChangeLabel = StateChangeLabel { from: Open, to: Filtered };

    #[test]
    fn sknn_puts_outlier_first() {
        let nscr = report(&[(10, &[SAME, SAME, CLOSED]), (1, &[OPENED, FILTERED, OPENED]), (10, &[SAME, SAME, CLOSED])]);
        let cfg = PipelineConfig::new(Algorithm::Sknn, Some(2), None, false, 0).unwrap();
        let run = run_pipeline(&nscr, &cfg).unwrap();
        assert_eq!(run.ranking.hosts[0].entry, 10);
        assert_eq!(run.ranking.hosts[0].rank, 1);
    }

    #[test]
    fn identical_rows_keep_input_order() {
        let nscr = report(&[(5, &[SAME, SAME, CLOSED])]);
        let cfg = PipelineConfig::new(Algorithm::Sknn, Some(3), None, false, 0).unwrap();
        let run = run_pipeline(&nscr, &cfg).unwrap();
        assert_eq!(run.ranking.order(), vec![0, 1, 2, 3, 4]);
        assert!(run.ranking.hosts.iter().all(|h| h.anomaly_score == Some(0.0)));
    }

    #[test]
    fn shac_visits_small_cluster_first() {
        let nscr = report(&[(30, &[SAME, SAME, CLOSED]), (2, &[OPENED, FILTERED, OPENED]), (40, &[FILTERED, CLOSED, SAME])]);
        let cfg = PipelineConfig::new(Algorithm::Shac, None, None, false, 3).unwrap();
        let run = run_pipeline(&nscr, &cfg).unwrap();
        let mut first: Vec<usize> = run.ranking.order()[..2].to_vec();
        first.sort();
        assert_eq!(first, vec![30, 31]);
    }

    #[test]
    fn pruning_maps_back_to_report_rows() {
        let nscr = report(&[(3, &[SAME, SAME, CLOSED]), (3, &[OPENED, SAME, CLOSED])]);
        let cfg = PipelineConfig::new(Algorithm::Sknn, Some(1), None, true, 0).unwrap();
        let run = run_pipeline(&nscr, &cfg).unwrap();
        assert_eq!(run.pruned, 3);
        let mut order = run.ranking.order();
        order.sort();
        assert_eq!(order, vec![3, 4, 5]);
    }

    #[test]
    fn lof_threshold_flags_nothing_on_small_distances() {
        // one-label differences sit at distance sqrt(2) < 1.5
        let nscr = report(&[(4, &[SAME, SAME, CLOSED]), (1, &[SAME, SAME, OPENED])]);
        let cfg = PipelineConfig::new(Algorithm::Lof, Some(2), None, false, 0).unwrap();
        let r = run_pipeline(&nscr, &cfg).unwrap().ranking;
        assert_eq!(r.flagged, Some(0));
        assert_eq!(r.order(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k_must_match_algorithm() {
        assert!(PipelineConfig::new(Algorithm::Sknn, None, None, true, 0).is_err());
        assert!(PipelineConfig::new(Algorithm::Sif, Some(3), None, true, 0).is_err());
        assert!(PipelineConfig::new(Algorithm::Sknn, Some(3), Some(0), true, 0).is_err());
    }

    #[test]
    fn k_at_least_n_is_rejected() {
        let nscr = report(&[(3, &[SAME, SAME, CLOSED])]);
        let cfg = PipelineConfig::new(Algorithm::Sknn, Some(3), None, false, 0).unwrap();
        assert!(matches!(run_pipeline(&nscr, &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn config_formats() {
        let kv = PipelineConfig::parse("algo = SKNN\nk=15\nsc=20\nprune=true # best\nseed=7").unwrap();
        let json = PipelineConfig::parse(r#"{"algorithm":"sknn","k":15,"sc":20,"pruning":true,"seed":7}"#).unwrap();
        assert_eq!(kv, json);
        assert_eq!(kv, PipelineConfig::sknn15_sc20(7));
        assert_eq!(kv.name(), "SKNN-15");
        let err = PipelineConfig::parse(r#"{"algorithm":"sknn","k":"x"}"#).unwrap_err();
        assert!(err.to_string().contains('k'));
        assert!(PipelineConfig::parse("algo=dbscan").is_err());
    }
}
