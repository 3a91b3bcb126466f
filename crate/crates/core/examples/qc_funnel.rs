//! Runs the QC cascade over a synthetic cohort with planted defects and
//! prints the funnel.
//!
//! ```text
//! cargo run --release --example qc_funnel -- 200
//! ```

use std::collections::BTreeMap;

use phantomforge::config::PipelineConfig;
use phantomforge::qc::{run_qc_pipeline, FinalStatus};
use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::Taxonomy;

fn main() -> phantomforge::Result<()> {
    let scans = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(&SynthConfig { scans, ..SynthConfig::default() }, &tax)?;
    let volumes = cohort.volume_tables(&tax)?;

    let mut cfg = PipelineConfig::default();
    // No reviewer here: every scan that survives the automatic checks passes.
    cfg.review.required = false;
    let run = run_qc_pipeline(&cohort.patients, &volumes, &tax, &cfg, &BTreeMap::new(), 0)?;
    print!("{}", run.funnel.to_table());

    let planted = [
        ("symmetry", &cohort.truth.symmetry_defects, FinalStatus::RejectedSymmetry),
        ("truncation", &cohort.truth.truncations, FinalStatus::RejectedZeroVolume),
        ("outlier", &cohort.truth.triple_outliers, FinalStatus::RejectedStatistical),
    ];
    println!();
    for (name, ids, want) in planted {
        let caught = ids.iter().filter(|id| run.outcomes[*id].final_status == want).count();
        println!("planted {name} defects caught: {caught}/{}", ids.len());
    }
    for w in &run.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
