#![allow(dead_code)]

use phantomforge::grid::{GridTemplate, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Voxels whose centres lie within `r` voxels of the grid centre.
pub fn sphere_mask(n: usize, r: f64, spacing: f64) -> VoxelGrid {
    let c = (n as f64 - 1.0) / 2.0;
    ball_union(n, spacing, &[([c, c, c], r)])
}

pub fn ball_union(n: usize, spacing: f64, balls: &[([f64; 3], f64)]) -> VoxelGrid {
    let tpl = GridTemplate::new([n; 3], [spacing; 3], [0.0; 3]).unwrap();
    let mut g = VoxelGrid::zeros(tpl).unwrap();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64, y as f64, z as f64];
                let inside = balls.iter().any(|(c, r)| {
                    (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>() <= r * r
                });
                if inside {
                    g.set(x, y, z, 1);
                }
            }
        }
    }
    g
}

/// Union of 2-5 random balls inside an `n`³ grid.
pub fn random_blob(seed: u64, n: usize) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=5);
    let balls: Vec<([f64; 3], f64)> = (0..k)
        .map(|_| {
            let r = rng.random_range(2.0..7.0);
            let c = [0; 3].map(|_| rng.random_range(r..n as f64 - 1.0 - r));
            (c, r)
        })
        .collect();
    ball_union(n, 1.0, &balls)
}

pub fn foreground(g: &VoxelGrid) -> usize {
    g.labels().iter().filter(|&&v| v != 0).count()
}

/// Catalog holding every scan of a synthetic cohort, before QC.
pub fn synthetic_catalog(
    dir: &std::path::Path,
    synth: &phantomforge::synth::SynthConfig,
    config: phantomforge::config::PipelineConfig,
) -> (phantomforge::catalog::Catalog, phantomforge::synth::SyntheticCohort) {
    use phantomforge::catalog::Catalog;
    use phantomforge::synth::SyntheticCohort;
    use phantomforge::taxonomy::Taxonomy;

    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(synth, &tax).unwrap();
    let mut cat = Catalog::init(dir, config, tax).unwrap();
    for p in &cohort.patients {
        for sid in &p.scans {
            let grid = cohort.render(sid).unwrap();
            cat.ingest_scan(sid, &grid, p, Some("synthetic")).unwrap();
        }
    }
    (cat, cohort)
}

pub fn review(verdict: phantomforge::qc::Verdict) -> phantomforge::catalog::ReviewRequest {
    phantomforge::catalog::ReviewRequest {
        verdict,
        rating: 4,
        reviewer: "dr.test".into(),
        notes: String::new(),
    }
}

/// Approves every pending scan in scan-ID order.
pub fn approve_all(cat: &mut phantomforge::catalog::Catalog) {
    let ids: Vec<String> = cat.pending_reviews().into_iter().map(|p| p.scan_id).collect();
    for id in ids {
        cat.submit_review(&id, &review(phantomforge::qc::Verdict::Approved))
            .unwrap();
    }
}
