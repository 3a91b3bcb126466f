//! Seeded synthetic cohorts with planted defects, used as fixtures for the QC
//! funnel, the catalog and the demo examples.
//!
//! Healthy volumes are deliberately tame. For each structure the cohort's
//! nonzero values sit on an evenly spaced grid `median · (1 + 0.25·t)`,
//! `t ∈ (-1, 1)`, shuffled across scans. An even grid has the minimal dip, so
//! every structure fits as unimodal, and its extremes score 2Φ(1.349) − 1 ≈ 0.82
//! against the IQR-derived sigma, safely under the 0.9 flag. The planted
//! defects are then the only way to leave the funnel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::grid::{write_label_grid, GridTemplate, VoxelGrid};
use crate::patient::PatientRecord;
use crate::taxonomy::{Sex, Taxonomy};
use crate::volumetry::VolumeTable;

/// Half-width of the healthy volume spread, as a fraction of the median.
const SPREAD: f64 = 0.25;
/// Rows of a packed label grid.
const PACK_XY: usize = 64;
const RACES: [(&str, f64); 5] = [
    ("white", 0.62),
    ("black", 0.20),
    ("asian", 0.08),
    ("hispanic", 0.06),
    ("other", 0.04),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scans: usize,
    pub seed: u64,
    /// Scans whose first three rib pairs get `right = 0.3 · left`.
    pub symmetry_defects: usize,
    /// Scans with about 40% of their expected structures zeroed.
    pub truncations: usize,
    /// Scans with three unpaired organs pushed ten robust sigmas high.
    pub triple_outliers: usize,
    /// Patients contributing two scans each.
    pub duplicate_patients: usize,
    /// Structure that is absent in `absent_fraction` of scans.
    pub absent_structure: Option<String>,
    pub absent_fraction: f64,
    /// Fraction of patients without height and weight.
    pub missing_habitus: f64,
    /// Isotropic voxel size of rendered grids.
    pub voxel_mm: f64,
    /// Age mean and SD for males, then females.
    pub age_male: (f64, f64),
    pub age_female: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scans: 200,
            seed: 2024,
            symmetry_defects: 5,
            truncations: 4,
            triple_outliers: 3,
            duplicate_patients: 10,
            absent_structure: Some("gallbladder".into()),
            absent_fraction: 0.16,
            missing_habitus: 0.1,
            voxel_mm: 5.0,
            age_male: (64.9, 14.0),
            age_female: (61.2, 15.6),
        }
    }
}

impl SynthConfig {
    /// Defect-free cohort: every scan reaches review.
    pub fn clean(scans: usize, seed: u64) -> Self {
        SynthConfig {
            scans,
            seed,
            symmetry_defects: 0,
            truncations: 0,
            triple_outliers: 0,
            duplicate_patients: 0,
            ..SynthConfig::default()
        }
    }
}

/// Scan IDs of every planted defect, for checking funnel outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub symmetry_defects: Vec<String>,
    pub truncations: Vec<String>,
    pub triple_outliers: Vec<String>,
    /// Patients with two scans.
    pub duplicate_patients: Vec<String>,
    /// Scans where the absent structure was left out.
    pub absent: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub patients: Vec<PatientRecord>,
    /// Voxel counts per scan, ascending structure ID, zeros omitted.
    pub counts: BTreeMap<String, BTreeMap<u16, u64>>,
    pub templates: BTreeMap<String, GridTemplate>,
    pub truth: PlantedTruth,
}

impl SyntheticCohort {
    pub fn generate(cfg: &SynthConfig, taxonomy: &Taxonomy) -> Result<SyntheticCohort> {
        let n = cfg.scans;
        let n_patients = n
            .checked_sub(cfg.duplicate_patients)
            .filter(|&p| p >= cfg.duplicate_patients && p > 0)
            .ok_or_else(|| Error::InvalidArgument("too many duplicate patients".into()))?;
        let planted = cfg.symmetry_defects + cfg.truncations + cfg.triple_outliers;
        if planted > n_patients - cfg.duplicate_patients {
            return Err(Error::InvalidArgument(
                "more planted defects than single-scan patients".into(),
            ));
        }
        if !(cfg.voxel_mm > 0.0) || !(0.0..=1.0).contains(&cfg.absent_fraction) {
            return Err(Error::InvalidArgument("bad synthetic cohort parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let scan_ids: Vec<String> = (1..=n).map(|i| format!("S{i:04}")).collect();
        let mut patients = make_patients(cfg, n_patients, &mut rng)?;
        // The first `duplicate_patients` patients own two scans.
        let mut owner = Vec::with_capacity(n);
        for (i, _) in patients.iter().enumerate() {
            owner.push(i);
            if i < cfg.duplicate_patients {
                owner.push(i);
            }
        }
        for (sid, &p) in scan_ids.iter().zip(&owner) {
            patients[p].scans.push(sid.clone());
        }
        let sex_of: Vec<Sex> = owner.iter().map(|&p| patients[p].sex).collect();

        let expected: BTreeMap<Sex, BTreeSet<u16>> = [Sex::Male, Sex::Female]
            .into_iter()
            .map(|s| (s, taxonomy.expected_structures(s)))
            .collect();
        let absent_id = match &cfg.absent_structure {
            Some(name) => Some(
                taxonomy
                    .by_name(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("no structure named {name}")))?
                    .id,
            ),
            None => None,
        };

        // Healthy volumes in mL.
        let mut volumes: Vec<BTreeMap<u16, f64>> = vec![BTreeMap::new(); n];
        let mut absent = BTreeSet::new();
        let mut medians = BTreeMap::new();
        for s in taxonomy.structures().iter().filter(|s| s.expected) {
            let fresh = (20f64.ln() + rng.random::<f64>() * (600f64 / 20.0).ln()).exp();
            // Contralateral partners share a median.
            let median = s.pair_id.and_then(|p| medians.get(&p).copied()).unwrap_or(fresh);
            medians.insert(s.id, median);
            let mut holders: Vec<usize> =
                (0..n).filter(|&i| expected[&sex_of[i]].contains(&s.id)).collect();
            holders.shuffle(&mut rng);
            if Some(s.id) == absent_id {
                let k = (cfg.absent_fraction * holders.len() as f64).round() as usize;
                absent.extend(holders.drain(..k));
            }
            let m = holders.len();
            for (rank, &i) in holders.iter().enumerate() {
                let t = -1.0 + (2.0 * rank as f64 + 1.0) / m as f64;
                volumes[i].insert(s.id, median * (1.0 + SPREAD * t));
            }
        }

        // Planted defects go to single-scan patients only.
        let mut pool: Vec<usize> = (2 * cfg.duplicate_patients..n).collect();
        pool.shuffle(&mut rng);
        let mut take = |k: usize| -> Vec<usize> {
            let mut v: Vec<usize> = pool.drain(..k).collect();
            v.sort_unstable();
            v
        };
        let sym = take(cfg.symmetry_defects);
        let trunc = take(cfg.truncations);
        let triple = take(cfg.triple_outliers);

        let pairs = taxonomy.symmetric_pairs();
        for &i in &sym {
            for &(l, r) in pairs.iter().take(3) {
                let left = *volumes[i].get(&l).unwrap_or(&0.0);
                volumes[i].insert(r, 0.3 * left);
            }
        }
        for &i in &trunc {
            let exp: Vec<u16> = expected[&sex_of[i]].iter().copied().collect();
            let target = (0.4 * exp.len() as f64).ceil() as usize;
            let mut zeroed = BTreeSet::new();
            for &id in exp.iter().rev() {
                if zeroed.len() >= target {
                    break;
                }
                zeroed.insert(id);
                if let Some(p) = taxonomy.get(id).and_then(|d| d.pair_id) {
                    zeroed.insert(p);
                }
            }
            for id in zeroed {
                volumes[i].remove(&id);
            }
        }
        let trio: BTreeSet<u16> = taxonomy.skull_trio().into_iter().flatten().collect();
        let mut unpaired: Vec<u16> = taxonomy
            .structures()
            .iter()
            .filter(|s| {
                s.expected
                    && s.pair_id.is_none()
                    && s.sex_specific.is_none()
                    && Some(s.id) != absent_id
                    && !trio.contains(&s.id)
            })
            .map(|s| s.id)
            .collect();
        unpaired.shuffle(&mut rng);
        if unpaired.len() < 3 * triple.len() {
            return Err(Error::InvalidArgument(
                "taxonomy has too few unpaired structures for triple outliers".into(),
            ));
        }
        for (j, &i) in triple.iter().enumerate() {
            for &id in &unpaired[3 * j..3 * j + 3] {
                // Ten robust sigmas: IQR of an even grid on (-1, 1) is 1.
                volumes[i].insert(id, medians[&id] * (1.0 + SPREAD * 10.0 / 1.349));
            }
        }

        let voxel_ml = cfg.voxel_mm.powi(3) / 1000.0;
        let mut counts = BTreeMap::new();
        let mut templates = BTreeMap::new();
        for (i, sid) in scan_ids.iter().enumerate() {
            let c: BTreeMap<u16, u64> = volumes[i]
                .iter()
                .map(|(&id, &ml)| (id, (ml / voxel_ml).round() as u64))
                .filter(|&(_, c)| c > 0)
                .collect();
            let total: u64 = c.values().sum();
            let nz = (total as usize).div_ceil(PACK_XY * PACK_XY) + 1;
            templates.insert(
                sid.clone(),
                GridTemplate::new([PACK_XY, PACK_XY, nz], [cfg.voxel_mm; 3], [0.0; 3])?,
            );
            counts.insert(sid.clone(), c);
        }
        let ids = |v: &[usize]| v.iter().map(|&i| scan_ids[i].clone()).collect();
        let truth = PlantedTruth {
            symmetry_defects: ids(&sym),
            truncations: ids(&trunc),
            triple_outliers: ids(&triple),
            duplicate_patients: patients[..cfg.duplicate_patients]
                .iter()
                .map(|p| p.patient_id.clone())
                .collect(),
            absent: absent.iter().map(|&i| scan_ids[i].clone()).collect(),
        };
        Ok(SyntheticCohort {
            patients,
            counts,
            templates,
            truth,
        })
    }

    pub fn scan_ids(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn volume_tables(&self, taxonomy: &Taxonomy) -> Result<BTreeMap<String, VolumeTable>> {
        self.counts
            .iter()
            .map(|(sid, c)| Ok((sid.clone(), VolumeTable::from_counts(&self.templates[sid], c, taxonomy)?)))
            .collect()
    }

    /// Label grid realising the scan's counts: structures packed in ascending
    /// ID order along the x-fastest storage order, background after.
    pub fn render(&self, scan_id: &str) -> Result<VoxelGrid> {
        let tpl = self
            .templates
            .get(scan_id)
            .ok_or_else(|| Error::NotFound(format!("scan {scan_id}")))?;
        let mut labels = Vec::with_capacity(tpl.voxel_count());
        for (&id, &c) in &self.counts[scan_id] {
            labels.extend(std::iter::repeat_n(id, c as usize));
        }
        labels.resize(tpl.voxel_count(), 0);
        VoxelGrid::from_template(*tpl, labels)
    }

    /// Writes `<scan_id>.lvol` grids (gzip) and `patients.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for sid in self.counts.keys() {
            write_label_grid(&self.render(sid)?, dir.join(format!("{sid}.lvol")), true)?;
        }
        let meta = dir.join("patients.json");
        let text = serde_json::to_string_pretty(&self.patients)?;
        std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
        let truth = dir.join("truth.json");
        let text = serde_json::to_string_pretty(&self.truth)?;
        std::fs::write(&truth, text).map_err(|e| Error::io(&truth, e))
    }
}

fn make_patients(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PatientRecord>> {
    let mut sexes: Vec<Sex> = (0..n).map(|i| if i % 2 == 0 { Sex::Male } else { Sex::Female }).collect();
    sexes.shuffle(rng);
    let mut ages: BTreeMap<Sex, Vec<f64>> = BTreeMap::new();
    for (sex, (mean, sd)) in [(Sex::Male, cfg.age_male), (Sex::Female, cfg.age_female)] {
        let k = sexes.iter().filter(|&&s| s == sex).count();
        let mut a = exact_moments(k, mean, sd);
        a.shuffle(rng);
        ages.insert(sex, a);
    }
    let height = |sex: Sex| match sex {
        Sex::Female => Normal::new(1.62, 0.065),
        _ => Normal::new(1.75, 0.07),
    };
    let bmi = Normal::new(27.0, 4.5).expect("valid normal");
    let mut out = Vec::with_capacity(n);
    for (i, &sex) in sexes.iter().enumerate() {
        let age = ages.get_mut(&sex).and_then(Vec::pop).expect("one age per patient");
        let (h, w) = if rng.random::<f64>() < cfg.missing_habitus {
            (None, None)
        } else {
            let h: f64 = height(sex).expect("valid normal").sample(rng);
            let b = f64::clamp(bmi.sample(rng), 16.0, 50.0);
            let h = (h * 100.0).round() / 100.0;
            (Some(h), Some((b * h * h).round()))
        };
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let race = RACES
            .iter()
            .find(|(_, p)| {
                acc += p;
                u < acc
            })
            .map_or("other", |r| r.0);
        out.push(PatientRecord {
            patient_id: format!("P{:04}", i + 1),
            sex,
            age_years: (age * 10.0).round() / 10.0,
            height_m: h,
            weight_kg: w,
            race: race.into(),
            scans: Vec::new(),
        });
    }
    Ok(out)
}

/// `k` values with sample mean `mean` and sample SD `sd` exactly, shaped like
/// normal quantiles. Clamped at 14 so every synthetic patient passes the age
/// gate.
fn exact_moments(k: usize, mean: f64, sd: f64) -> Vec<f64> {
    if k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![mean];
    }
    let std = StdNormal::standard();
    let z: Vec<f64> = (0..k).map(|i| std.inverse_cdf((i as f64 + 0.5) / k as f64)).collect();
    let m = z.iter().sum::<f64>() / k as f64;
    let s = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
    z.iter().map(|v| (mean + sd * (v - m) / s).max(14.0)).collect()
}
