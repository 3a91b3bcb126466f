//! Writes a synthetic cohort (label grids plus patient metadata) to disk,
//! ready for `phantomforge ingest`.
//!
//! ```text
//! cargo run --example synth_cohort -- /tmp/cohort 60
//! ```

use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::Taxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("phantomforge-cohort"));
    let scans = args.next().map(|s| s.parse()).transpose()?.unwrap_or(60);

    let cfg = SynthConfig {
        scans,
        symmetry_defects: 2,
        truncations: 2,
        triple_outliers: 1,
        duplicate_patients: 3,
        ..SynthConfig::default()
    };
    let cohort = SyntheticCohort::generate(&cfg, &Taxonomy::bundled())?;
    cohort.write_to(&out)?;

    println!("{} scans from {} patients in {}", scans, cohort.patients.len(), out.display());
    println!("planted defects: {}", serde_json::to_string_pretty(&cohort.truth)?);
    Ok(())
}
