//! Rank changed hosts with every pipeline and compare how far down each one
//! must go to reach the last vulnerable host.

use portdrift::datagen::{generate, DatasetKind, DatasetSpec};
use portdrift::pipelines::{run_pipeline, Algorithm, PipelineConfig};
use portdrift::service::ranking_table;
use portdrift::triage::debugging_cost;

fn main() -> portdrift::Result<()> {
    let nscr = generate(&DatasetSpec::new(DatasetKind::Synthetic, 20, 7))?;
    let vulnerable = |e: &usize| nscr.entries()[*e].vulnerable == Some(true);
    for algo in Algorithm::ALL {
        let k = algo.uses_k().then_some(15);
        let cfg = PipelineConfig::new(algo, k, Some(20), true, 7)?;
        let run = run_pipeline(&nscr, &cfg)?;
        let order = run.ranking.order();
        let dc = debugging_cost(&order, vulnerable)?;
        println!("{:<10} ranked {:>3}, last vulnerable host at rank {dc}", cfg.name(), order.len());
    }

    let run = run_pipeline(&nscr, &PipelineConfig::sknn15_sc20(7))?;
    let table = ranking_table(&run.ranking, &nscr);
    println!("\n{}", table.lines().take(11).collect::<Vec<_>>().join("\n"));
    Ok(())
}
