//! Walk a ranking host by host, stopping after a run of false positives,
//! then replay the recorded verdicts.

use portdrift::datagen::{generate, DatasetKind, DatasetSpec};
use portdrift::pipelines::{run_pipeline, PipelineConfig};
use portdrift::triage::TriageSession;

fn main() -> portdrift::Result<()> {
    let nscr = generate(&DatasetSpec::new(DatasetKind::Synthetic, 15, 4))?;
    let cfg = PipelineConfig::sknn15_sc20(4);
    let ranking = run_pipeline(&nscr, &cfg)?.ranking.hosts;

    let mut session = TriageSession::new(ranking.clone(), cfg.sc)?.with_total_vulnerable(nscr.vulnerable_count());
    while let Some(host) = session.next() {
        let truth = nscr.entries()[host.entry].vulnerable == Some(true);
        let outcome = session.record_verdict(truth)?;
        if outcome.stopped {
            println!("stopped at rank {} after {} false positives in a row", session.inspected(), outcome.consecutive_fp);
        }
    }
    let report = session.report();
    println!("{}", serde_json::to_string_pretty(&report)?);

    let replayed = TriageSession::replay(ranking, &session.export_log())?.with_total_vulnerable(nscr.vulnerable_count());
    println!("replay reproduces the report: {}", replayed.report() == report);
    Ok(())
}
