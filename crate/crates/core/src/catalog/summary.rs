//! Cohort summaries over accepted phantoms: age by race, sex counts, a
//! height × weight histogram and per-structure volume statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::manifest::PhantomManifest;
use crate::error::{Error, Result};
use crate::taxonomy::{Sex, Taxonomy};

pub const AGE_BIN_YEARS: f64 = 5.0;
pub const HEIGHT_BIN_M: f64 = 0.05;
pub const WEIGHT_BIN_KG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Moments> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Moments {
            n,
            mean,
            std,
            note: (n == 1).then(|| "n=1".to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    /// Inclusive lower edge; the bin is `[lo, lo + 5)`.
    pub lo: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitusCell {
    pub height_lo_m: f64,
    pub weight_lo_kg: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitusHistogram {
    pub height_bin_m: f64,
    pub weight_bin_kg: f64,
    /// Occupied cells only, ascending height then weight.
    pub cells: Vec<HabitusCell>,
    /// Phantoms lacking height or weight.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsSummary {
    pub phantoms: usize,
    pub sex_counts: BTreeMap<Sex, usize>,
    pub age_by_sex: BTreeMap<Sex, Moments>,
    pub age_bin_years: f64,
    pub age_histogram_by_race: BTreeMap<String, Vec<AgeBin>>,
    pub habitus: HabitusHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeStat {
    pub structure_id: u16,
    pub name: String,
    /// Phantoms in which the structure is expected.
    pub expected_in: usize,
    /// Nonzero volumes.
    pub present: usize,
    pub mean_ml: Option<f64>,
    pub std_ml: Option<f64>,
    pub missing_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn bin(v: f64, width: f64) -> i64 {
    // Nudge so values on an edge land in the upper bin despite rounding.
    ((v + 1e-9) / width).floor() as i64
}

fn bin_edge(i: i64, width: f64) -> f64 {
    // Round away representation noise such as 1.7000000000000002.
    ((i as f64 * width) * 1e6).round() / 1e6
}

pub fn demographics(manifests: &[&PhantomManifest]) -> Result<DemographicsSummary> {
    if manifests.is_empty() {
        return Err(Error::NotFound("no accepted phantoms to summarise".into()));
    }
    let mut sex_counts = BTreeMap::new();
    let mut ages: BTreeMap<Sex, Vec<f64>> = BTreeMap::new();
    let mut race_bins: BTreeMap<String, BTreeMap<i64, usize>> = BTreeMap::new();
    let mut cells: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut missing = 0;
    for m in manifests {
        let p = &m.patient;
        *sex_counts.entry(p.sex).or_insert(0) += 1;
        ages.entry(p.sex).or_default().push(p.age_years);
        *race_bins
            .entry(p.race.clone())
            .or_default()
            .entry(bin(p.age_years, AGE_BIN_YEARS))
            .or_insert(0) += 1;
        match (p.height_m, p.weight_kg) {
            (Some(h), Some(w)) => {
                *cells.entry((bin(h, HEIGHT_BIN_M), bin(w, WEIGHT_BIN_KG))).or_insert(0) += 1
            }
            _ => missing += 1,
        }
    }
    Ok(DemographicsSummary {
        phantoms: manifests.len(),
        sex_counts,
        age_by_sex: ages
            .into_iter()
            .filter_map(|(s, v)| Moments::of(&v).map(|m| (s, m)))
            .collect(),
        age_bin_years: AGE_BIN_YEARS,
        age_histogram_by_race: race_bins
            .into_iter()
            .map(|(race, bins)| {
                let bins = bins
                    .into_iter()
                    .map(|(i, count)| AgeBin {
                        lo: bin_edge(i, AGE_BIN_YEARS),
                        count,
                    })
                    .collect();
                (race, bins)
            })
            .collect(),
        habitus: HabitusHistogram {
            height_bin_m: HEIGHT_BIN_M,
            weight_bin_kg: WEIGHT_BIN_KG,
            cells: cells
                .into_iter()
                .map(|((h, w), count)| HabitusCell {
                    height_lo_m: bin_edge(h, HEIGHT_BIN_M),
                    weight_lo_kg: bin_edge(w, WEIGHT_BIN_KG),
                    count,
                })
                .collect(),
            missing,
        },
    })
}

/// Volume mean and SD per expected structure, zeros excluded. The missing
/// fraction counts zeros among phantoms whose sex expects the structure.
pub fn volume_stats(manifests: &[&PhantomManifest], taxonomy: &Taxonomy) -> Result<Vec<VolumeStat>> {
    if manifests.is_empty() {
        return Err(Error::NotFound("no accepted phantoms to summarise".into()));
    }
    let expected: BTreeMap<Sex, _> = [Sex::Male, Sex::Female, Sex::Unknown]
        .into_iter()
        .map(|s| (s, taxonomy.expected_structures(s)))
        .collect();
    let mut out = Vec::new();
    for s in taxonomy.structures().iter().filter(|s| s.expected) {
        let holders: Vec<&&PhantomManifest> = manifests
            .iter()
            .filter(|m| expected[&m.patient.sex].contains(&s.id))
            .collect();
        if holders.is_empty() {
            continue;
        }
        let vols: Vec<f64> = holders
            .iter()
            .filter_map(|m| m.structure(s.id).map(|e| e.volume_ml))
            .filter(|&v| v > 0.0)
            .collect();
        let moments = Moments::of(&vols);
        out.push(VolumeStat {
            structure_id: s.id,
            name: s.name.clone(),
            expected_in: holders.len(),
            present: vols.len(),
            mean_ml: moments.as_ref().map(|m| m.mean),
            std_ml: moments.as_ref().map(|m| m.std),
            missing_fraction: (holders.len() - vols.len()) as f64 / holders.len() as f64,
            note: moments.and_then(|m| m.note),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_moments() {
        let m = Moments::of(&[3.0]).unwrap();
        assert_eq!((m.n, m.mean, m.std), (1, 3.0, 0.0));
        assert_eq!(m.note.as_deref(), Some("n=1"));
        assert!(Moments::of(&[]).is_none());
    }

    #[test]
    fn sample_std() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(m.note.is_none());
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin(64.9, 5.0), 12);
        assert_eq!(bin(65.0, 5.0), 13);
        assert_eq!(bin(1.75, 0.05), 35);
        assert_eq!(bin_edge(34, 0.05), 1.7);
    }
}
