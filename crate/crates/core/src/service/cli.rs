//! `portdrift` command line.

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand};

use super::http::{self, ServeOptions, DEFAULT_PORT, PORT_ENV};
use super::{ranking_table, write_ranking_csv, HostView};
use crate::datagen::{self, DatasetKind, DatasetSpec, MutationSpec};
use crate::error::{Error, Result};
use crate::evalharness::{self, ExperimentSpec, GroupFilter, Metric, StageTiming};
use crate::hostmatch::{self, Nscr};
use crate::pipelines::{self, Algorithm, PipelineConfig};
use crate::scanmodel::{self, IngestOptions, PortState, ScanDataset, StateMode};
use crate::triage::{FpCounting, SessionLog, TriageSession};

#[derive(Debug, Parser)]
#[command(name = "portdrift", version, about = "Port-state drift triage for network reconfigurations")]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Convert scanner XML into the canonical dataset CSV.
    Ingest(IngestArgs),
    /// Match two scans and write the state-change report.
    Match(MatchArgs),
    /// Rank the hosts of a state-change report.
    Prioritize(PrioritizeArgs),
    /// Walk a ranking host by host, recording verdicts.
    Triage(TriageArgs),
    /// Generate a labeled evaluation report.
    Datagen(DatagenArgs),
    /// Run a batch experiment from a JSON spec.
    Experiment(ExperimentArgs),
    /// Time the end-to-end processing of a scan pair.
    Timing(TimingArgs),
    /// Serve the triage session API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Scanner XML file.
    #[arg(long, conflicts_with = "invoke_scanner", required_unless_present = "invoke_scanner")]
    xml: Option<PathBuf>,
    /// Shell command producing scanner XML; `{out}` is replaced by an output
    /// path, otherwise the command's stdout is read.
    #[arg(long)]
    invoke_scanner: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// State of ports a host does not list.
    #[arg(long, default_value = "closed", value_parser = parse_state)]
    default_state: PortState,
    /// Map `closed|filtered` and `unfiltered` onto filtered.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Initial scan, XML or dataset CSV.
    #[arg(long)]
    initial: PathBuf,
    /// Updated scan, XML or dataset CSV.
    #[arg(long)]
    updated: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "closed", value_parser = parse_state)]
    default_state: PortState,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Config file, JSON or key=value.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, e.g. sknn15-sc20.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    k: Option<usize>,
    /// Stopping condition: consecutive false positives before stopping.
    #[arg(long)]
    sc: Option<usize>,
    /// Inspect the whole ranking (no stopping condition).
    #[arg(long, conflicts_with = "sc")]
    no_sc: bool,
    #[arg(long, overrides_with = "no_prune")]
    prune: bool,
    #[arg(long, overrides_with = "prune")]
    no_prune: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineArgs {
    /// Config file or preset (SKNN-15, SC=20 by default), then flag overrides.
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => PipelineConfig::from_file(path)?,
            (None, Some(name)) => PipelineConfig::preset(name, 0)
                .ok_or_else(|| Error::Parameter(format!("unknown preset `{name}`")))?,
            (None, None) => PipelineConfig::sknn15_sc20(0),
        };
        if let Some(algo) = self.algo {
            cfg.algorithm = algo;
            if !algo.uses_k() {
                cfg.k = None;
            }
            if algo.is_baseline() {
                cfg.sc = None;
            }
        }
        if self.k.is_some() {
            cfg.k = self.k;
        }
        if self.sc.is_some() {
            cfg.sc = self.sc;
        }
        if self.no_sc {
            cfg.sc = None;
        }
        if self.prune {
            cfg.pruning = true;
        }
        if self.no_prune {
            cfg.pruning = false;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct PrioritizeArgs {
    #[arg(long)]
    nscr: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write the ranked report as CSV instead of printing a table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TriageArgs {
    #[arg(long)]
    nscr: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Answer from the report's `vulnerable` column instead of asking.
    #[arg(long)]
    auto: bool,
    /// Resume from a saved event log.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Save the event log here when done.
    #[arg(long)]
    log_out: Option<PathBuf>,
    /// Leave the stop-triggering false positives out of precision.
    #[arg(long)]
    exclude_terminal: bool,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[arg(long, default_value = "synthetic")]
    kind: DatasetKind,
    /// Final row count.
    #[arg(long, default_value_t = datagen::PAPER_TOTAL)]
    total: usize,
    #[arg(long)]
    vuln: usize,
    /// Rows with valid changes (default depends on the kind).
    #[arg(long)]
    valid_changes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the scan pair behind the report (initial.xml, updated.xml, expected.csv).
    #[arg(long)]
    scans: Option<PathBuf>,
    /// Hosts given a new IP in the updated scan of `--scans`.
    #[arg(long, default_value_t = 0, requires = "scans")]
    mutate_ip: usize,
    /// Hosts given a new MAC in the updated scan of `--scans`.
    #[arg(long, default_value_t = 0, requires = "scans")]
    mutate_mac: usize,
    /// Change IP and MAC of the same `--mutate-ip` hosts.
    #[arg(long, requires = "scans")]
    both: bool,
    /// Write the scenario template fixtures to this directory.
    #[arg(long)]
    scenarios: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Results CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave the timing column empty so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Per (kind, pipeline) mean/median table.
    #[arg(long, requires = "out")]
    aggregate: Option<PathBuf>,
    /// Pruned-versus-unpruned comparison table (JSON).
    #[arg(long, requires = "out")]
    pruning_table: Option<PathBuf>,
    /// First group of a significance test, e.g. `sknn,k=15`.
    #[arg(long, requires_all = ["against", "out"])]
    compare: Option<GroupFilter>,
    #[arg(long, requires = "compare")]
    against: Option<GroupFilter>,
    #[arg(long, default_value = "f1")]
    metric: Metric,
}

#[derive(Debug, Args)]
struct TimingArgs {
    #[arg(long)]
    initial: PathBuf,
    #[arg(long)]
    updated: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Write the per-stage table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory server-side report paths are resolved against.
    #[arg(long, default_value = ".")]
    data_dir: PathBuf,
    /// Persist session event logs here.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Static UI bundle to serve under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Allowed CORS origin (any when omitted).
    #[arg(long)]
    cors_origin: Option<String>,
}

fn parse_state(s: &str) -> std::result::Result<PortState, String> {
    scanmodel::canonical_port_state(s, StateMode::Strict).map_err(|e| e.to_string())
}

/// Opens `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_scan(path: &Path, default_state: PortState) -> Result<ScanDataset> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return scanmodel::read_dataset(path);
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    scanmodel::ingest_scan_with(
        &std::fs::read_to_string(path)?,
        &IngestOptions {
            default_state,
            label,
            ..IngestOptions::default()
        },
    )
}

fn invoke_scanner(template: &str) -> Result<String> {
    let out_path = std::env::temp_dir().join(format!("portdrift-scan-{}.xml", std::process::id()));
    let uses_file = template.contains("{out}");
    let command = template.replace("{out}", &out_path.to_string_lossy());
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| Error::Scanner(format!("could not start `{command}`: {e}")))?;
    if !result.status.success() {
        return Err(Error::Scanner(format!(
            "`{command}` exited with {}: {}",
            result.status,
            String::from_utf8_lossy(&result.stderr).trim()
        )));
    }
    if uses_file {
        let xml = std::fs::read_to_string(&out_path)
            .map_err(|e| Error::Scanner(format!("scanner wrote no output at {}: {e}", out_path.display())))?;
        let _ = std::fs::remove_file(&out_path);
        Ok(xml)
    } else {
        String::from_utf8(result.stdout).map_err(|e| Error::Scanner(format!("scanner output is not UTF-8: {e}")))
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let (xml, label) = match (&a.xml, &a.invoke_scanner) {
        (Some(path), _) => (
            std::fs::read_to_string(path)?,
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        ),
        (None, Some(template)) => (invoke_scanner(template)?, "scan".to_string()),
        (None, None) => unreachable!("clap requires one source"),
    };
    let ds = scanmodel::ingest_scan_with(
        &xml,
        &IngestOptions {
            default_state: a.default_state,
            mode: if a.lenient { StateMode::Lenient } else { StateMode::Strict },
            label,
        },
    )?;
    eprintln!("{} hosts, {} ports", ds.len(), ds.port_universe().len());
    scanmodel::write_dataset_to(&ds, output(a.out.as_deref())?)
}

fn match_scans(a: &MatchArgs) -> Result<()> {
    let initial = load_scan(&a.initial, a.default_state)?;
    let updated = load_scan(&a.updated, a.default_state)?;
    let nscr = hostmatch::compare_scans(&initial, &updated);
    eprintln!(
        "{} rows ({} changed) from {} + {} hosts",
        nscr.len(),
        nscr.entries().iter().filter(|e| e.has_change()).count(),
        initial.len(),
        updated.len()
    );
    hostmatch::write_nscr_to(&nscr, output(a.out.as_deref())?)
}

fn prioritize(a: &PrioritizeArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let nscr = hostmatch::read_nscr(&a.nscr)?;
    let run = pipelines::run_pipeline(&nscr, &cfg)?;
    eprintln!("{}: {} hosts ranked, {} pruned", cfg.name(), run.ranking.len(), run.pruned);
    match &a.out {
        Some(path) => write_ranking_csv(&run.ranking, &nscr, BufWriter::new(File::create(path)?)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(ranking_table(&run.ranking, &nscr).as_bytes())?;
            Ok(())
        }
    }
}

fn host_card(rank: usize, total: usize, view: &HostView, score: Option<f64>) -> String {
    let ip = |v: Option<std::net::Ipv4Addr>| v.map_or("-".to_string(), |ip| ip.to_string());
    let mut card = format!(
        "#{rank}/{total}  {} -> {}  mac {}  score {}\n",
        ip(view.ip_initial),
        ip(view.ip_updated),
        view.mac.map_or("-".to_string(), |m| m.to_string()),
        score.map_or("-".to_string(), |s| format!("{s:.6}")),
    );
    for c in &view.changes {
        card.push_str(&format!("    {:<10} {}\n", c.port.to_string(), c.label));
    }
    card
}

fn triage(a: &TriageArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let nscr = hostmatch::read_nscr(&a.nscr)?;
    if a.auto && !nscr.has_ground_truth() {
        return Err(Error::Parameter("--auto needs a report with a `vulnerable` column".into()));
    }
    let run = pipelines::run_pipeline(&nscr, &cfg)?;
    let counting = if a.exclude_terminal {
        FpCounting::ExcludeTerminal
    } else {
        FpCounting::IncludeTerminal
    };
    let mut session = match &a.replay {
        Some(path) => {
            let log: SessionLog = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            TriageSession::replay(run.ranking.hosts, &log)?
        }
        None => TriageSession::new(run.ranking.hosts, cfg.sc)?.with_counting(counting),
    };
    if nscr.has_ground_truth() {
        session = session.with_total_vulnerable(nscr.vulnerable_count());
    }

    let mut out = io::stdout().lock();
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let total = session.ranking().len();
    while let Some(h) = session.next().cloned() {
        let view = HostView::of(&nscr, h.entry);
        out.write_all(host_card(h.rank, total, &view, h.anomaly_score).as_bytes())?;
        let vulnerable = if a.auto {
            nscr.entries()[h.entry].vulnerable == Some(true)
        } else {
            eprint!("vulnerable? [y/n/q] ");
            match lines.next().transpose()?.as_deref().map(str::trim) {
                Some("y" | "Y" | "yes") => true,
                Some("n" | "N" | "no") => false,
                Some("q" | "Q" | "quit") | None => break,
                Some(other) => {
                    eprintln!("answer y, n or q (got `{other}`)");
                    continue;
                }
            }
        };
        // simulated verdicts carry no wall-clock time so reruns are identical
        let outcome = if a.auto {
            session.record_verdict_at(h.rank, vulnerable, 0)?
        } else {
            session.record_verdict(vulnerable)?
        };
        let sc = session.sc().map_or("-".to_string(), |s| s.to_string());
        writeln!(
            out,
            "    verdict {}  consecutive FP {}/{}",
            if vulnerable { "vulnerable" } else { "not vulnerable" },
            outcome.consecutive_fp,
            sc
        )?;
    }
    if session.stopped() {
        writeln!(out, "stopped after {} hosts", session.inspected())?;
    }
    serde_json::to_writer_pretty(&mut out, &session.report())?;
    writeln!(out)?;
    if let Some(path) = &a.log_out {
        std::fs::write(path, serde_json::to_vec_pretty(&session.export_log())?)?;
    }
    Ok(())
}

fn datagen(a: &DatagenArgs) -> Result<()> {
    let mut spec = DatasetSpec::new(a.kind, a.vuln, a.seed);
    spec.total = a.total;
    if let Some(v) = a.valid_changes {
        spec.valid_change_count = v;
    }
    let nscr = datagen::generate(&spec)?;
    eprintln!("{} rows, {} vulnerable", nscr.len(), nscr.vulnerable_count());
    hostmatch::write_nscr_to(&nscr, output(a.out.as_deref())?)?;
    if let Some(dir) = &a.scans {
        write_scan_pair(&nscr, dir, a)?;
    }
    if let Some(dir) = &a.scenarios {
        std::fs::create_dir_all(dir)?;
        datagen::scenario_fixtures(dir)?;
    }
    Ok(())
}

fn write_scan_pair(nscr: &Nscr, dir: &Path, a: &DatagenArgs) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (initial, updated) = datagen::scan_pair_from_nscr(nscr, a.seed)?;
    let m = datagen::mutate_addresses(
        &initial,
        &updated,
        &MutationSpec {
            n_ip: a.mutate_ip,
            n_mac: a.mutate_mac,
            both: a.both,
            seed: a.seed,
        },
    )?;
    std::fs::write(dir.join("initial.xml"), scanmodel::write_scan_xml(&m.initial))?;
    std::fs::write(dir.join("updated.xml"), scanmodel::write_scan_xml(&m.updated))?;
    hostmatch::write_nscr(&m.expected, dir.join("expected.csv"))
}

fn experiment(a: &ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::from_file(&a.spec)?;
    spec.omit_timing |= a.no_timing;
    let summary = evalharness::run_experiment(&spec, output(a.out.as_deref())?)?;
    eprintln!("{} result rows", summary.rows);
    for e in &summary.errors {
        eprintln!("warning: {e}");
    }
    let Some(results) = &a.out else { return Ok(()) };
    if a.aggregate.is_none() && a.pruning_table.is_none() && a.compare.is_none() {
        return Ok(());
    }
    let rows = evalharness::read_results(File::open(results)?)?;
    if let Some(path) = &a.aggregate {
        evalharness::write_aggregates(&evalharness::aggregate(&rows), File::create(path)?)?;
    }
    if let Some(path) = &a.pruning_table {
        std::fs::write(path, serde_json::to_vec_pretty(&evalharness::pruning_comparison(&rows))?)?;
    }
    if let (Some(ga), Some(gb)) = (&a.compare, &a.against) {
        let c = evalharness::compare_pipelines(&rows, a.metric, ga, gb)?;
        println!("{}", serde_json::to_string_pretty(&c)?);
    }
    Ok(())
}

fn timing(a: &TimingArgs) -> Result<()> {
    if a.runs == 0 {
        return Err(Error::Parameter("--runs must be at least 1".into()));
    }
    let cfg = a.pipeline.resolve()?;
    let initial = std::fs::read_to_string(&a.initial)?;
    let updated = std::fs::read_to_string(&a.updated)?;
    let runs: Vec<Vec<StageTiming>> = (0..a.runs)
        .map(|_| evalharness::process_scans(&initial, &updated, &cfg).map(|(_, t)| t))
        .collect::<Result<_>>()?;
    let report = evalharness::timing_report(&runs);
    println!("{report}");
    if let Some(path) = &a.out {
        report.write_csv(File::create(path)?)?;
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let opts = ServeOptions {
        host: a.host,
        port: a.port,
        data_dir: a.data_dir.clone(),
        log_dir: a.log_dir.clone(),
        ui_dir: a.ui_dir.clone(),
        cors_origin: a.cors_origin.clone(),
    };
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(http::serve(opts))
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Verb::Ingest(a) => ingest(a),
        Verb::Match(a) => match_scans(a),
        Verb::Prioritize(a) => prioritize(a),
        Verb::Triage(a) => triage(a),
        Verb::Datagen(a) => datagen(a),
        Verb::Experiment(a) => experiment(a),
        Verb::Timing(a) => timing(a),
        Verb::Serve(a) => serve(a),
    }
}

/// Parses arguments and runs; returns the process exit code (2 for usage
/// errors, 1 for failures).
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}
