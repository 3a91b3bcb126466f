//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use tower::ServiceExt;

use common::{approve_all, random_blob, review, sphere_mask, synthetic_catalog};
use phantomforge::catalog::{Catalog, MeshRequest};
use phantomforge::config::PipelineConfig;
use phantomforge::grid::{write_label_grid, GridTemplate, VoxelGrid};
use phantomforge::mesh::{
    check_watertight, laplacian_smooth, marching_cubes, mesh_volume, regular_tetrahedron,
};
use phantomforge::patient::PatientRecord;
use phantomforge::qc::{
    dip_pvalue, dip_statistic, fit_volume_model, gmm_fit_em, outlier_probability,
    relative_difference, run_qc_pipeline, statistical_check, DipNull, FinalStatus, ModelConfig,
    ModelKind, Stage, Verdict,
};
use phantomforge::synth::SynthConfig;
use phantomforge::taxonomy::{Group, Sex, StructureDef, Taxonomy};
use phantomforge::volumetry::{dice, structure_volumes_streaming, VolumeTable};
use phantomforge::voxelize::voxelize_mesh;

/// Collects named checks for one criterion.
#[derive(Default)]
struct Checks(Vec<(bool, String)>);

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.0.push((ok, what.into()));
    }

    fn passed(&self) -> bool {
        self.0.iter().all(|(ok, _)| *ok)
    }
}

fn report(name: &str, run: impl FnOnce(&mut Checks)) -> bool {
    let t0 = Instant::now();
    let mut c = Checks::default();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut c)));
    if outcome.is_err() {
        c.check(false, "criterion panicked");
    }
    let ok = c.passed();
    println!(
        "{} {name} ({:.1} s)",
        if ok { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    for (pass, what) in &c.0 {
        println!("    [{}] {what}", if *pass { "ok" } else { "xx" });
    }
    ok
}

fn main() {
    println!("acceptance: {} worker thread(s) available", rayon::current_num_threads());
    let results = [
        report("synthetic funnel", synthetic_funnel),
        report("threshold boundaries", threshold_boundaries),
        report("dip calibration", dip_calibration),
        report("gmm recovery", gmm_recovery),
        report("outlier probability", outlier_semantics),
        report("geometry", geometry),
        report("performance", performance),
        report("persistence and api", persistence_api),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn synthetic_funnel(c: &mut Checks) {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (mut cat, cohort) =
        synthetic_catalog(dir.path(), &SynthConfig::default(), PipelineConfig::default());
    let ingest = t0.elapsed();
    let t1 = Instant::now();
    let funnel = cat.run_qc(None, 1).unwrap();
    let qc = t1.elapsed();
    let truth = &cohort.truth;

    for (stage, want) in [
        (Stage::Symmetry, &truth.symmetry_defects),
        (Stage::ZeroVolume, &truth.truncations),
        (Stage::Statistical, &truth.triple_outliers),
    ] {
        let got = &funnel.stage(stage).rejected_ids;
        c.check(
            got == want,
            format!("{stage:?}: rejected {} (planted {}), ids match: {}", got.len(), want.len(), got == want),
        );
    }
    let sym_ok = truth.symmetry_defects.iter().all(|s| {
        cat.outcomes()[s]
            .symmetry
            .as_ref()
            .is_some_and(|r| r.discrepant_pairs.len() == 3)
    });
    c.check(sym_ok, "each symmetry defect has exactly 3 discrepant pairs");
    let trunc_ok = truth.truncations.iter().all(|s| {
        cat.outcomes()[s]
            .zero_volume
            .is_some_and(|z| z.fraction > 0.25)
    });
    c.check(trunc_ok, "each truncation zeroes > 25% of expected structures");
    let triple_ok = truth.triple_outliers.iter().all(|s| {
        cat.outcomes()[s]
            .statistical
            .as_ref()
            .is_some_and(|r| r.flagged_ids.len() >= 3)
    });
    c.check(triple_ok, "each triple outlier flags >= 3 organs");
    c.check(
        funnel.stage(Stage::Age).rejected == 0,
        format!("age rejections {}", funnel.stage(Stage::Age).rejected),
    );

    let base = cat.outcomes().clone();
    let again = cat.run_qc(None, 1).unwrap();
    c.check(again == funnel && cat.outcomes() == &base, "rerun with jobs=1 is identical");
    let parallel = cat.run_qc(None, 4).unwrap();
    c.check(
        parallel == funnel && cat.outcomes() == &base,
        "jobs=4 gives identical outcomes and funnel",
    );

    approve_all(&mut cat);
    let f = cat.funnel().unwrap();
    c.check(
        f.stage(Stage::Dedup).rejected == truth.duplicate_patients.len(),
        format!(
            "dedup superseded {} scans for {} duplicated patients",
            f.stage(Stage::Dedup).rejected,
            truth.duplicate_patients.len()
        ),
    );
    let mut accepted_per_patient: BTreeMap<&str, usize> = BTreeMap::new();
    for o in cat.outcomes().values() {
        if o.final_status == FinalStatus::Accepted {
            *accepted_per_patient.entry(o.patient_id.as_str()).or_default() += 1;
        }
    }
    let dup_ok = truth
        .duplicate_patients
        .iter()
        .all(|p| accepted_per_patient.get(p.as_str()) == Some(&1));
    c.check(dup_ok, "exactly one accepted scan per duplicated patient");
    c.check(
        accepted_per_patient.values().all(|&n| n == 1),
        "at most one accepted phantom per patient",
    );
    c.check(
        qc < Duration::from_secs(60),
        format!("qc run {:.2} s < 60 s (ingest {:.2} s)", qc.as_secs_f64(), ingest.as_secs_f64()),
    );
}

fn flat_taxonomy() -> Taxonomy {
    let structures = (1..=140u16)
        .map(|id| StructureDef {
            id,
            name: format!("s{id:03}"),
            group: Group::General,
            pair_id: match id {
                1..=6 if id % 2 == 1 => Some(id + 1),
                1..=6 => Some(id - 1),
                _ => None,
            },
            sex_specific: None,
            expected: true,
        })
        .collect();
    Taxonomy::from_parts(structures, None, None).unwrap()
}

fn threshold_boundaries(c: &mut Checks) {
    let tax = flat_taxonomy();
    let cfg = PipelineConfig::default();
    let th = &cfg.thresholds;
    let tpl = GridTemplate::new([100, 100, 100], [1.0; 3], [0.0; 3]).unwrap();

    c.check(
        relative_difference(100, 50) == Some(0.5) && relative_difference(100, 49) == Some(0.51),
        "rel-diff of 100/50 is 0.50 and of 100/49 is 0.51",
    );

    // One scan per boundary case; each is its own patient.
    let cases: [(&str, f64, u64, usize); 6] = [
        ("rd050", 50.0, 50, 0),
        ("rd051", 50.0, 49, 0),
        ("zero35", 50.0, 100, 35),
        ("zero36", 50.0, 100, 36),
        ("age14", 14.0, 100, 0),
        ("age139", 13.9, 100, 0),
    ];
    let mut patients = Vec::new();
    let mut vols = BTreeMap::new();
    for (sid, age, right, zeros) in cases {
        let mut counts: BTreeMap<u16, u64> = (1..=140u16).map(|id| (id, 100)).collect();
        for id in [2, 4, 6] {
            counts.insert(id, right);
        }
        for id in (141 - zeros as u16)..=140 {
            counts.insert(id, 0);
        }
        vols.insert(sid.to_string(), VolumeTable::from_counts(&tpl, &counts, &tax).unwrap());
        patients.push(PatientRecord {
            patient_id: format!("p-{sid}"),
            sex: Sex::Female,
            age_years: age,
            height_m: None,
            weight_kg: None,
            race: "white".into(),
            scans: vec![sid.to_string()],
        });
    }
    let run = run_qc_pipeline(&patients, &vols, &tax, &cfg, &BTreeMap::new(), 1).unwrap();
    let status = |sid: &str| run.outcomes[sid].final_status;
    let rd = |sid: &str| {
        run.outcomes[sid]
            .symmetry
            .as_ref()
            .map_or(0, |s| s.discrepant_pairs.len())
    };
    c.check(
        rd("rd050") == 0 && status("rd050") == FinalStatus::PendingReview,
        format!("3 pairs at rel-diff 0.50: {} flagged, {}", rd("rd050"), status("rd050").as_str()),
    );
    c.check(
        rd("rd051") == 3 && status("rd051") == FinalStatus::RejectedSymmetry,
        format!("3 pairs at rel-diff 0.51: {} flagged, {}", rd("rd051"), status("rd051").as_str()),
    );
    c.check(
        status("zero35") == FinalStatus::PendingReview,
        format!("35/140 zero: {}", status("zero35").as_str()),
    );
    c.check(
        status("zero36") == FinalStatus::RejectedZeroVolume,
        format!("36/140 zero: {}", status("zero36").as_str()),
    );
    c.check(
        status("age14") == FinalStatus::PendingReview,
        format!("age 14: {}", status("age14").as_str()),
    );
    c.check(
        status("age139") == FinalStatus::RejectedAge,
        format!("age 13.9: {}", status("age139").as_str()),
    );

    let scores = |n: usize| -> BTreeMap<u16, f64> {
        (1..=10u16)
            .map(|id| (id, if (id as usize) <= n { 0.95 } else { 0.5 }))
            .collect()
    };
    let two = statistical_check(&scores(2), None, th.outlier_threshold, th.max_flagged_organs);
    let three = statistical_check(&scores(3), None, th.outlier_threshold, th.max_flagged_organs);
    c.check(two.pass, "2 organs with p_out > 0.9 pass");
    c.check(!three.pass, "3 organs with p_out > 0.9 fail");
    let at = statistical_check(&BTreeMap::from([(1, 0.9)]), None, th.outlier_threshold, 0);
    c.check(at.flagged_ids.is_empty(), "p_out exactly 0.9 is not flagged");
}

fn dip_calibration(c: &mut Checks) {
    let t0 = Instant::now();
    let alpha = 0.05;
    let draws = 2000;
    let mut rejected = 0;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let mut x: Vec<f64> = (0..50).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        x.sort_by(f64::total_cmp);
        let d = dip_statistic(&x).unwrap();
        let p = dip_pvalue(d, x.len(), draws, 90_000 + trial, DipNull::Normal).unwrap();
        rejected += usize::from(p < alpha);
    }
    let size = rejected as f64 / 1000.0;
    c.check(
        (0.03..=0.07).contains(&size),
        format!("unimodal n=50: rejection rate {size:.3} in [0.03, 0.07]"),
    );

    let mut detected = 0;
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20_000 + trial);
        let mut x: Vec<f64> = (0..100)
            .map(|i| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                if i % 2 == 0 { z } else { z + 4.0 }
            })
            .collect();
        x.sort_by(f64::total_cmp);
        let d = dip_statistic(&x).unwrap();
        let p = dip_pvalue(d, x.len(), draws, 95_000 + trial, DipNull::Normal).unwrap();
        detected += usize::from(p < alpha);
    }
    let power = detected as f64 / 200.0;
    c.check(
        power >= 0.95,
        format!("modes 4 sigma apart, n=100: detected {power:.3} >= 0.95"),
    );
    let el = t0.elapsed();
    c.check(
        el < Duration::from_secs(300),
        format!("runtime {:.1} s < 300 s", el.as_secs_f64()),
    );
}

fn gmm_recovery(c: &mut Checks) {
    let mut worst_mean: f64 = 0.0;
    let mut worst_weight: f64 = 0.0;
    let mut monotone = true;
    let trials = 20;
    let a = Normal::new(100.0, 15.0).unwrap();
    let b = Normal::new(300.0, 15.0).unwrap();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        // Exactly 250 per component: with random labels the sample
        // proportion alone strays past 0.05 in about 2.5% of draws.
        let x: Vec<f64> = (0..500)
            .map(|i| if i < 250 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        let fit = gmm_fit_em(&x, 2).unwrap();
        let mut comps: Vec<(f64, f64)> = fit
            .params
            .means
            .iter()
            .copied()
            .zip(fit.params.weights.iter().copied())
            .collect();
        comps.sort_by(|p, q| p.0.total_cmp(&q.0));
        worst_mean = worst_mean
            .max((comps[0].0 - 100.0).abs())
            .max((comps[1].0 - 300.0).abs());
        worst_weight = worst_weight
            .max((comps[0].1 - 0.5).abs())
            .max((comps[1].1 - 0.5).abs());
        monotone &= fit
            .trace
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    }
    c.check(worst_mean <= 5.0, format!("{trials} trials: worst mean error {worst_mean:.3} <= 5"));
    c.check(
        worst_weight <= 0.05,
        format!("{trials} trials: worst weight error {worst_weight:.4} <= 0.05"),
    );
    c.check(monotone, "log-likelihood non-decreasing at every iteration");
}

/// Evenly spread normal quantiles, so the sample is exactly symmetric.
fn normal_quantile_sample(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let z = NormalDist::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| mean + sd * z.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect()
}

fn outlier_semantics(c: &mut Checks) {
    let cfg = ModelConfig::default();
    let x = normal_quantile_sample(200, 400.0, 40.0);
    let m = fit_volume_model(&x, 1, &cfg).unwrap();
    c.check(m.kind == ModelKind::Unimodal, format!("symmetric sample fits {:?}", m.kind));
    let u = m.unimodal_params.unwrap();
    let p_med = outlier_probability(&m, u.median).unwrap();
    c.check(p_med == 0.0, format!("p_out(median) = {p_med}"));
    let fence = u.q3 + 1.5 * (u.q3 - u.q1);
    let p_fence = outlier_probability(&m, fence).unwrap();
    let oracle = 2.0 * NormalDist::new(0.0, 1.0).unwrap().cdf(2.698) - 1.0;
    c.check(
        (p_fence - oracle).abs() < 1e-3,
        format!("p_out(fence) = {p_fence:.5}, 2*Phi(2.698)-1 = {oracle:.5}"),
    );

    let mut with_zeros = normal_quantile_sample(84, 40.0, 8.0);
    with_zeros.extend([0.0; 16]);
    let mz = fit_volume_model(&with_zeros, 2, &cfg).unwrap();
    let p0 = outlier_probability(&mz, 0.0).unwrap();
    let flagged = statistical_check(&BTreeMap::from([(2, p0)]), None, 0.9, 2);
    c.check(
        (p0 - 0.84).abs() <= 0.01 && flagged.flagged_ids.is_empty(),
        format!("absent organ at 16% prevalence: p_out {p0:.4}, flagged {}", !flagged.flagged_ids.is_empty()),
    );

    let mut bimodal = normal_quantile_sample(100, 100.0, 10.0);
    bimodal.extend(normal_quantile_sample(100, 300.0, 10.0));
    let mut worst: f64 = 0.0;
    for sample in [&x, &bimodal] {
        let base = fit_volume_model(sample, 3, &cfg).unwrap();
        for scale in [0.001, 0.37, 12.5, 1000.0] {
            let scaled: Vec<f64> = sample.iter().map(|v| v * scale).collect();
            let ms = fit_volume_model(&scaled, 3, &cfg).unwrap();
            for probe in [0.0, 50.0, 99.0, 180.0, 200.0, 310.0, 420.0, 600.0] {
                let a = outlier_probability(&base, probe).unwrap();
                let b = outlier_probability(&ms, probe * scale).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    c.check(
        worst <= 1e-6,
        format!("scale equivariance, unimodal and bimodal: max |dp| = {worst:.2e}"),
    );
}

fn centroid_distances(v: &[[f64; 3]]) -> Vec<f64> {
    let n = v.len() as f64;
    let c = [0, 1, 2].map(|k| v.iter().map(|p| p[k]).sum::<f64>() / n);
    v.iter()
        .map(|p| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>().sqrt())
        .collect()
}

fn geometry(c: &mut Checks) {
    let mut one = VoxelGrid::zeros(GridTemplate::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap()).unwrap();
    one.set(0, 0, 0, 1);
    let oct = marching_cubes(&one).unwrap();
    let v = mesh_volume(&oct);
    c.check(
        (v - 1.0 / 6.0).abs() < 1e-12
            && check_watertight(&oct).watertight
            && oct.euler_characteristic() == 2
            && oct.vertex_count() == 6
            && oct.triangle_count() == 8,
        format!(
            "single voxel: volume {v}, {} vertices, {} triangles, euler {}",
            oct.vertex_count(),
            oct.triangle_count(),
            oct.euler_characteristic()
        ),
    );

    let sphere = sphere_mask(48, 20.0, 1.0);
    let mesh = marching_cubes(&sphere).unwrap();
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * 20f64.powi(3);
    let err = (mesh_volume(&mesh) - analytic).abs() / analytic;
    c.check(err < 0.02, format!("sphere r=20: volume error {:.3}%", 100.0 * err));

    let same = laplacian_smooth(&mesh, 0.0, 5).unwrap();
    c.check(same == mesh, "lambda=0 smoothing is bit-identical");

    let tet = regular_tetrahedron();
    let step = laplacian_smooth(&tet, 1.0, 1).unwrap();
    let before = centroid_distances(&tet.vertices);
    let after = centroid_distances(&step.vertices);
    let worst = before
        .iter()
        .zip(&after)
        .map(|(b, a)| (a / b - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    c.check(worst < 1e-12, format!("tetrahedron lambda=1: ratio error {worst:.1e}"));

    let back = voxelize_mesh(&mesh, sphere.template()).unwrap();
    let d = dice(&sphere, &back).unwrap();
    c.check(d >= 0.98, format!("sphere round-trip dice {d:.4} >= 0.98"));
    let mut worst_blob: f64 = 1.0;
    for seed in 0..20 {
        let g = random_blob(seed, 32);
        let m = marching_cubes(&g).unwrap();
        let back = voxelize_mesh(&m, g.template()).unwrap();
        worst_blob = worst_blob.min(dice(&g, &back).unwrap());
    }
    c.check(worst_blob >= 0.95, format!("20 random blobs: min dice {worst_blob:.4} >= 0.95"));
}

fn performance(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.lvol");
    {
        let tpl = GridTemplate::new([512, 512, 256], [0.8, 0.8, 1.5], [0.0; 3]).unwrap();
        let labels: Vec<u16> = (0..tpl.voxel_count()).map(|i| ((i / 7) % 141) as u16).collect();
        let grid = VoxelGrid::from_template(tpl, labels).unwrap();
        write_label_grid(&grid, &path, false).unwrap();
    }
    let tax = Taxonomy::bundled();
    let t0 = Instant::now();
    let vt = structure_volumes_streaming(&path, &tax).unwrap();
    let el = t0.elapsed();
    // Labels cycle through 0..=140, so every structure gets an equal share.
    c.check(
        el < Duration::from_secs(10) && vt.count(1) > 0 && vt.count(140) > 0,
        format!(
            "volumetry 512x512x256 streamed one slice at a time: {:.2} s < 10 s",
            el.as_secs_f64()
        ),
    );

    let sphere = sphere_mask(48, 20.0, 1.0);
    let t1 = Instant::now();
    let mesh = marching_cubes(&sphere).unwrap();
    let smooth = laplacian_smooth(&mesh, 0.5, 20).unwrap();
    let el = t1.elapsed();
    c.check(
        el < Duration::from_secs(5) && smooth.vertex_count() == mesh.vertex_count(),
        format!("marching cubes + 20 smoothing iterations, r=20: {:.3} s < 5 s", el.as_secs_f64()),
    );
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &axum::Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let res = app
        .clone()
        .oneshot(
            Request::post(uri)
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
        .unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn has_keys(v: &Value, keys: &[&str]) -> bool {
    keys.iter().all(|k| v.get(k).is_some())
}

fn persistence_api(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let (mut cat, _) = synthetic_catalog(dir.path(), &SynthConfig::clean(30, 11), PipelineConfig::default());
    cat.run_qc(None, 1).unwrap();
    let pending: Vec<String> = cat.pending_reviews().into_iter().map(|p| p.scan_id).collect();
    for (i, sid) in pending.iter().enumerate().take(pending.len() - 3) {
        let verdict = match i % 5 {
            0 => Verdict::Rejected,
            1 => Verdict::Flagged,
            _ => Verdict::Approved,
        };
        cat.submit_review(sid, &review(verdict)).unwrap();
    }
    let current: BTreeMap<String, FinalStatus> = cat
        .outcomes()
        .iter()
        .map(|(k, o)| (k.clone(), o.final_status))
        .collect();
    let replayed = cat.replay_log().unwrap();
    c.check(replayed == current, "log replay reproduces every final status");
    c.check(cat.verify_log().unwrap().is_empty(), "stored qc.json files agree with the replay");
    let reopened = Catalog::open(dir.path()).unwrap();
    let reloaded: BTreeMap<String, FinalStatus> = reopened
        .outcomes()
        .iter()
        .map(|(k, o)| (k.clone(), o.final_status))
        .collect();
    c.check(reloaded == current, "reopened catalog has the same statuses");

    let accepted = cat
        .manifests()
        .values()
        .find(|m| m.status() == FinalStatus::Accepted)
        .map(|m| m.phantom_id.clone())
        .unwrap();
    let sid = cat.manifest(&accepted).unwrap().structures[0].id;
    cat.extract_meshes(
        &MeshRequest {
            phantoms: Some(vec![accepted.clone()]),
            structure: Some(sid),
            lambda: 0.5,
            iterations: 5,
        },
        1,
    )
    .unwrap();
    let still_pending = pending.last().unwrap().clone();

    // The router is built without any UI bundle.
    let app = phantomforge::server::router(Arc::new(RwLock::new(cat)), None);
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    rt.block_on(async {
        let json_endpoints: [(&str, String, &[&str]); 6] = [
            ("list", "/api/phantoms?sex=female&age_min=20".into(), &["count", "phantoms"]),
            ("manifest", format!("/api/phantoms/{accepted}"), &["phantom_id", "patient", "structures", "qc", "review_rating", "pipeline_version", "created_at"]),
            ("pending", "/api/reviews/pending".into(), &["count", "items"]),
            ("demographics", "/api/stats/demographics".into(), &["phantoms", "sex_counts", "age_by_sex", "age_histogram_by_race", "habitus"]),
            ("volumes", "/api/stats/volumes".into(), &["structures"]),
            ("funnel", "/api/qc/funnel".into(), &["total_scans", "stages", "accepted", "pending_review"]),
        ];
        for (name, uri, keys) in json_endpoints {
            let (status, body) = get(&app, &uri).await;
            let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            c.check(
                status == StatusCode::OK && has_keys(&v, keys),
                format!("GET {name}: {status}, schema keys present: {}", has_keys(&v, keys)),
            );
        }
        let (status, body) = get(&app, &format!("/api/phantoms/{accepted}/structures/{sid}/mesh")).await;
        c.check(
            status == StatusCode::OK && body.starts_with(b"ply\n"),
            format!("GET mesh: {status}, PLY payload {} bytes", body.len()),
        );
        let (status, body) = get(&app, &format!("/api/phantoms/{accepted}/preview/z.png")).await;
        c.check(
            status == StatusCode::OK && body.starts_with(b"\x89PNG"),
            format!("GET preview: {status}"),
        );
        let req = r#"{"verdict":"approved","rating":5,"reviewer":"dr.api","notes":""}"#;
        let (status, v) = post(&app, &format!("/api/reviews/{still_pending}"), req).await;
        c.check(
            status == StatusCode::OK && v["final_status"] == "accepted",
            format!("POST review: {status}, final_status {}", v["final_status"]),
        );
        let (status, v) = post(&app, &format!("/api/reviews/{still_pending}"), req).await;
        c.check(
            status == StatusCode::CONFLICT && has_keys(&v, &["error", "message"]),
            format!("second verdict: {status}, error {}", v["error"]),
        );
        let (status, body) = get(&app, "/api/phantoms/NOPE").await;
        let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        c.check(
            status == StatusCode::NOT_FOUND && has_keys(&v, &["error", "message"]),
            format!("unknown phantom: {status}, error {}", v["error"]),
        );
        let (status, body) = get(&app, "/api/phantoms?age_min=70&age_max=60").await;
        let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        c.check(
            status == StatusCode::BAD_REQUEST && has_keys(&v, &["error", "message"]),
            format!("inverted age range: {status}, error {}", v["error"]),
        );
    });

    let statuses: BTreeSet<&str> = current.values().map(|s| s.as_str()).collect();
    c.check(
        statuses.contains("rejected_review") && statuses.contains("pending_review"),
        format!("exercised statuses {statuses:?}"),
    );
}
