//! Batch experiments: many pipelines, many data sets, many repetitions.
//!
//! Results stream to CSV in a fixed order regardless of how many threads do
//! the work. Rankings depend only on (data set, repetition, algorithm, K,
//! pruning), so each one is computed once and evaluated for every SC.

mod aggregate;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::hostmatch::{self, Nscr};
use crate::pipelines::{self, Algorithm, PipelineConfig, RankedHost};
use crate::rng;
use crate::scanmodel::{self, PortState};
use crate::triage;

pub use aggregate::{
    aggregate, compare_pipelines, pruning_comparison, read_results, timing_report, write_aggregates, Aggregate,
    Comparison, GroupFilter, Metric, PruningComparison, StageStats, StageTiming, Summary, TimingReport, ALPHA,
};

/// Column order of the results file.
pub const RESULT_COLUMNS: [&str; 12] = [
    "dataset", "kind", "algo", "k", "sc", "prune", "rep", "precision", "recall", "f1", "dc", "ms",
];

/// One corpus member: a report file, or a report generated on the fly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusEntry {
    Path(PathBuf),
    File {
        path: PathBuf,
        #[serde(default)]
        kind: Option<DatasetKind>,
    },
    Generated {
        generate: GeneratedDataset,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedDataset {
    pub kind: DatasetKind,
    pub vulnerable: usize,
    pub seed: u64,
    #[serde(default)]
    pub total: Option<usize>,
}

impl GeneratedDataset {
    pub fn spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::new(self.kind, self.vulnerable, self.seed);
        if let Some(total) = self.total {
            spec.total = total;
        }
        spec
    }

    pub fn name(&self) -> String {
        format!("{}-v{}-s{}", self.kind, self.vulnerable, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: Vec<CorpusEntry>,
    pub configs: Vec<PipelineConfig>,
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Leave the `ms` column empty, making the results file reproducible byte for byte.
    #[serde(default)]
    pub omit_timing: bool,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ExperimentSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Schema(format!("{}: {}", e.path(), e.inner())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative corpus paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut spec.corpus {
            match e {
                CorpusEntry::Path(p) | CorpusEntry::File { path: p, .. } if p.is_relative() => {
                    *p = base.join(&*p);
                }
                _ => {}
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_empty() {
            return Err(Error::param("experiment corpus is empty"));
        }
        if self.configs.is_empty() {
            return Err(Error::param("experiment lists no pipeline configuration"));
        }
        if self.repetitions == 0 {
            return Err(Error::param("repetitions must be at least 1"));
        }
        self.configs.iter().try_for_each(PipelineConfig::validate)
    }

    /// Ten generated synthetic/realistic data sets, seven pipelines, five repetitions.
    pub fn desk_preset(master_seed: u64) -> Self {
        let corpus = (0..10)
            .map(|i| CorpusEntry::Generated {
                generate: GeneratedDataset {
                    kind: if i % 2 == 0 { DatasetKind::Synthetic } else { DatasetKind::Realistic },
                    vulnerable: 5 * (i / 2 + 1) * 2,
                    seed: i as u64,
                    total: None,
                },
            })
            .collect();
        let cfg = |algorithm, k, sc| PipelineConfig {
            pruning: true,
            algorithm,
            k,
            sc,
            seed: 0,
        };
        ExperimentSpec {
            corpus,
            configs: vec![
                cfg(Algorithm::Sknn, Some(15), Some(20)),
                cfg(Algorithm::Sknn, Some(20), Some(20)),
                cfg(Algorithm::Sif, None, Some(20)),
                cfg(Algorithm::Skm, None, Some(20)),
                cfg(Algorithm::Shac, None, Some(20)),
                cfg(Algorithm::Lof, Some(15), None),
                cfg(Algorithm::If, None, None),
            ],
            repetitions: 5,
            master_seed,
            omit_timing: false,
        }
    }
}

/// A loaded corpus member.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub kind: Option<DatasetKind>,
    pub nscr: Arc<Nscr>,
}

fn kind_from_name(name: &str) -> Option<DatasetKind> {
    let lower = name.to_ascii_lowercase();
    // "realistic" before "real", which is its prefix
    [DatasetKind::Realistic, DatasetKind::Synthetic, DatasetKind::Real]
        .into_iter()
        .find(|k| lower.starts_with(k.token()))
}

pub fn load_dataset(entry: &CorpusEntry) -> Result<Dataset> {
    match entry {
        CorpusEntry::Generated { generate } => Ok(Dataset {
            name: generate.name(),
            kind: Some(generate.kind),
            nscr: Arc::new(datagen::generate(&generate.spec())?),
        }),
        CorpusEntry::Path(path) | CorpusEntry::File { path, .. } => {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let kind = match entry {
                CorpusEntry::File { kind: Some(k), .. } => Some(*k),
                _ => kind_from_name(&name),
            };
            Ok(Dataset {
                name,
                kind,
                nscr: Arc::new(hostmatch::read_nscr(path)?),
            })
        }
    }
}

fn entry_label(entry: &CorpusEntry) -> String {
    match entry {
        CorpusEntry::Generated { generate } => generate.name(),
        CorpusEntry::Path(p) | CorpusEntry::File { path: p, .. } => p.display().to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub kind: String,
    pub algo: Algorithm,
    pub k: Option<usize>,
    pub sc: Option<usize>,
    pub prune: bool,
    pub rep: usize,
    pub precision: f64,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dc: Option<usize>,
    /// Ranking wall-clock time, shared by every SC of the same pipeline.
    pub ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemError {
    pub dataset: String,
    pub config: Option<String>,
    pub rep: Option<usize>,
    pub message: String,
}

impl fmt::Display for ItemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dataset)?;
        if let Some(c) = &self.config {
            write!(f, " {c}")?;
        }
        if let Some(r) = self.rep {
            write!(f, " rep {r}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub rows: usize,
    pub errors: Vec<ItemError>,
}

/// Seed of one (data set, repetition) cell.
pub fn repetition_seed(master: u64, dataset: usize, rep: usize) -> u64 {
    rng::derive_seed(master, &[dataset as u64, rep as u64])
}

/// Same ranking for every config sharing these fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct RankingKey {
    algo: Algorithm,
    k: Option<usize>,
    prune: bool,
}

/// Runs every (data set, config, repetition) cell and writes one CSV row per
/// successful cell to `out`. Unloadable data sets and failing cells are
/// collected in the summary.
pub fn run_experiment<W: Write>(spec: &ExperimentSpec, out: W) -> Result<ExperimentSummary> {
    spec.validate()?;
    let mut summary = ExperimentSummary::default();
    let mut datasets = Vec::new();
    for (i, entry) in spec.corpus.iter().enumerate() {
        match load_dataset(entry) {
            Ok(d) => datasets.push((i, d)),
            Err(e) => {
                warn!("skipping {}: {e}", entry_label(entry));
                summary.errors.push(ItemError {
                    dataset: entry_label(entry),
                    config: None,
                    rep: None,
                    message: e.to_string(),
                });
            }
        }
    }

    let mut groups: BTreeMap<RankingKey, Vec<&PipelineConfig>> = BTreeMap::new();
    let mut key_order = Vec::new();
    for cfg in &spec.configs {
        let key = RankingKey {
            algo: cfg.algorithm,
            k: cfg.k,
            prune: cfg.pruning,
        };
        if !groups.contains_key(&key) {
            key_order.push(key);
        }
        groups.entry(key).or_default().push(cfg);
    }

    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    let cells: Vec<(usize, &Dataset, usize)> = datasets
        .iter()
        .flat_map(|(i, d)| (0..spec.repetitions).map(move |r| (*i, d, r)))
        .collect();
    // bounded batches keep memory flat at paper scale
    for batch in cells.chunks(rayon::current_num_threads().max(1) * 4) {
        let results: Vec<(Vec<ResultRow>, Vec<ItemError>)> = batch
            .par_iter()
            .map(|&(i, d, rep)| {
                let seed = repetition_seed(spec.master_seed, i, rep);
                run_cell(d, rep, seed, !spec.omit_timing, &key_order, &groups)
            })
            .collect();
        for (rows, errors) in results {
            for row in &rows {
                write_row(&mut w, row)?;
            }
            summary.rows += rows.len();
            summary.errors.extend(errors);
        }
        w.flush()?;
    }
    Ok(summary)
}

fn run_cell(
    d: &Dataset,
    rep: usize,
    seed: u64,
    timed: bool,
    key_order: &[RankingKey],
    groups: &BTreeMap<RankingKey, Vec<&PipelineConfig>>,
) -> (Vec<ResultRow>, Vec<ItemError>) {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let total_vulnerable = d.nscr.vulnerable_count();
    let oracle = |h: &RankedHost| d.nscr.entries()[h.entry].vulnerable == Some(true);
    for key in key_order {
        let configs = &groups[key];
        let cfg = PipelineConfig {
            seed,
            sc: None,
            ..*configs[0]
        };
        let started = Instant::now();
        let run = run_clamped(&d.nscr, &cfg);
        let ms = started.elapsed().as_secs_f64() * 1e3;
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                errors.push(ItemError {
                    dataset: d.name.clone(),
                    config: Some(cfg.name()),
                    rep: Some(rep),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let ranking = &run.ranking;
        let found_all = ranking.hosts.iter().filter(|h| oracle(h)).count() == total_vulnerable;
        let dc = if found_all {
            triage::debugging_cost(&ranking.hosts, oracle).ok()
        } else {
            None
        };
        for c in configs {
            let report = if c.sc.is_some() || ranking.flagged.is_some() {
                pipelines::selected_subset(ranking, c, oracle, total_vulnerable)
            } else {
                let opts = triage::SelectionOptions {
                    total_vulnerable: Some(total_vulnerable),
                    ..Default::default()
                };
                Ok(triage::evaluate_prefix(&ranking.hosts, oracle, &opts))
            };
            match report {
                Ok(r) => rows.push(ResultRow {
                    dataset: d.name.clone(),
                    kind: d.kind.map_or_else(|| "unknown".to_string(), |k| k.to_string()),
                    algo: c.algorithm,
                    k: c.k,
                    sc: if c.algorithm.is_baseline() { None } else { c.sc },
                    prune: c.pruning,
                    rep,
                    precision: r.precision,
                    recall: r.recall,
                    f1: r.f1,
                    dc,
                    ms: timed.then_some(ms),
                }),
                Err(e) => errors.push(ItemError {
                    dataset: d.name.clone(),
                    config: Some(c.name()),
                    rep: Some(rep),
                    message: e.to_string(),
                }),
            }
        }
    }
    (rows, errors)
}

/// Runs a pipeline, lowering K to n-1 when pruning leaves too few hosts.
pub fn run_clamped(nscr: &Nscr, cfg: &PipelineConfig) -> Result<pipelines::PipelineRun> {
    match pipelines::run_pipeline(nscr, cfg) {
        Err(Error::Parameter(msg)) if cfg.k.is_some() => {
            let rows = if cfg.pruning {
                nscr.entries().iter().filter(|e| e.has_change()).count()
            } else {
                nscr.len()
            };
            match cfg.k {
                Some(k) if rows >= 2 && k >= rows => {
                    let clamped = PipelineConfig {
                        k: Some(rows - 1),
                        ..*cfg
                    };
                    pipelines::run_pipeline(nscr, &clamped)
                }
                _ => Err(Error::Parameter(msg)),
            }
        }
        other => other,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, r: &ResultRow) -> Result<()> {
    w.write_record([
        r.dataset.clone(),
        r.kind.clone(),
        r.algo.to_string(),
        opt(r.k),
        opt(r.sc),
        r.prune.to_string(),
        r.rep.to_string(),
        format!("{:.6}", r.precision),
        opt(r.recall.map(|v| format!("{v:.6}"))),
        opt(r.f1.map(|v| format!("{v:.6}"))),
        opt(r.dc),
        opt(r.ms.map(|v| format!("{v:.3}"))),
    ])?;
    Ok(())
}

/// End-to-end processing of two scanner XML files: ingest, match, encode and
/// prioritize, with per-stage wall-clock times.
pub fn process_scans(
    initial_xml: &str,
    updated_xml: &str,
    cfg: &PipelineConfig,
) -> Result<(pipelines::PipelineRun, Vec<StageTiming>)> {
    let t = Instant::now();
    let initial = scanmodel::ingest_scan(initial_xml, PortState::Closed)?;
    let updated = scanmodel::ingest_scan(updated_xml, PortState::Closed)?;
    let ingest = t.elapsed();
    let t = Instant::now();
    let nscr = hostmatch::compare_scans(&initial, &updated);
    let matching = t.elapsed();
    let run = pipelines::run_pipeline(&nscr, cfg)?;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let timings = vec![
        StageTiming::new("ingest", ms(ingest)),
        StageTiming::new("match", ms(matching)),
        StageTiming::new("encode", ms(run.timings.prune + run.timings.encode)),
        StageTiming::new("prioritize", ms(run.timings.prioritize)),
    ];
    Ok((run, timings))
}
