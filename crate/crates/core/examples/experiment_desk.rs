//! Run a small experiment grid, then summarise it per pipeline and test the
//! effect of pruning.

use portdrift::evalharness::{aggregate, pruning_comparison, read_results, run_experiment, ExperimentSpec};

const SPEC: &str = r#"{
  "corpus": [
    {"generate": {"kind": "synthetic", "vulnerable": 10, "seed": 1}},
    {"generate": {"kind": "synthetic", "vulnerable": 30, "seed": 2}},
    {"generate": {"kind": "realistic", "vulnerable": 10, "seed": 3}},
    {"generate": {"kind": "realistic", "vulnerable": 30, "seed": 4}}
  ],
  "configs": [
    {"algorithm": "sknn", "k": 15, "sc": 20, "pruning": true},
    {"algorithm": "sknn", "k": 15, "sc": 20, "pruning": false},
    {"algorithm": "sif", "sc": 20, "pruning": true},
    {"algorithm": "sif", "sc": 20, "pruning": false},
    {"algorithm": "if", "pruning": true}
  ],
  "repetitions": 3
}"#;

fn main() -> portdrift::Result<()> {
    let spec = ExperimentSpec::parse(SPEC)?;
    let mut csv = Vec::new();
    let summary = run_experiment(&spec, &mut csv)?;
    println!("{} result rows, {} errors", summary.rows, summary.errors.len());

    let rows = read_results(csv.as_slice())?;
    for agg in aggregate(&rows) {
        println!("{}", serde_json::to_string(&agg)?);
    }
    for c in pruning_comparison(&rows) {
        if let Some(f1) = c.f1 {
            println!(
                "{} pruned vs unpruned F1: median {:.3} vs {:.3}, p={:.3}",
                c.algo, f1.median_a, f1.median_b, f1.p
            );
        }
    }
    Ok(())
}
