//! End-to-end catalog workflow: ingest, QC, review, query, mesh and
//! summarise. The catalog is left on disk for inspection.

use phantomforge::catalog::{Catalog, MeshRequest, PhantomFilter, ReviewRequest};
use phantomforge::config::PipelineConfig;
use phantomforge::qc::Verdict;
use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::{Sex, Taxonomy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("phantomforge-catalog");
    if root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(&SynthConfig { scans: 60, ..SynthConfig::default() }, &tax)?;

    let mut cat = Catalog::init(&root, PipelineConfig::default(), tax)?;
    for p in &cohort.patients {
        for sid in &p.scans {
            cat.ingest_scan(sid, &cohort.render(sid)?, p, Some("synthetic"))?;
        }
    }
    let funnel = cat.run_qc(None, 0)?;
    print!("{}", funnel.to_table());

    // A reviewer works through the queue; every fifth scan gets turned down.
    let queue = cat.pending_reviews();
    for (i, item) in queue.iter().enumerate() {
        let verdict = if i % 5 == 4 { Verdict::Rejected } else { Verdict::Approved };
        let req = ReviewRequest { verdict, rating: 4, reviewer: "dr.example".into(), notes: String::new() };
        cat.submit_review(&item.scan_id, &req)?;
    }
    println!("\nreviewed {} scans; log replay mismatches: {}", queue.len(), cat.verify_log()?.len());
    print!("{}", cat.funnel()?.to_table());

    let older_women = PhantomFilter {
        sex: Some(Sex::Female),
        age_min: Some(60.0),
        ..PhantomFilter::default()
    };
    let hits = cat.query_phantoms(&older_women)?;
    println!("\nfemale phantoms aged 60+: {}", hits.len());
    let ids: Vec<String> = hits.iter().take(2).map(|m| m.phantom_id.clone()).collect();

    let liver = cat.taxonomy().by_name("liver").map(|s| s.id);
    let written = cat.extract_meshes(
        &MeshRequest { phantoms: Some(ids.clone()), structure: liver, lambda: 0.5, iterations: 10 },
        0,
    )?;
    for p in &written {
        println!("mesh {}", p.display());
    }
    if let Some(id) = ids.first() {
        println!("voxel phantom {}", cat.voxelize_phantom(id, 4.0)?.display());
    }

    let demo = cat.demographics_summary()?;
    for (sex, m) in &demo.age_by_sex {
        println!("{sex:?}: n={} age {:.1} +/- {:.1}", m.n, m.mean, m.std);
    }
    println!("catalog at {}", root.display());
    Ok(())
}
