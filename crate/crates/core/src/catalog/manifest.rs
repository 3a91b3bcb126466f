use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patient::PatientRecord;
use crate::qc::{FinalStatus, QcOutcome};
use crate::taxonomy::Sex;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Demographics as recorded when the manifest was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSnapshot {
    pub patient_id: String,
    pub sex: Sex,
    pub age_years: f64,
    pub height_m: Option<f64>,
    pub weight_kg: Option<f64>,
    pub bmi: Option<f64>,
    pub race: String,
}

impl From<&PatientRecord> for PatientSnapshot {
    fn from(p: &PatientRecord) -> Self {
        PatientSnapshot {
            patient_id: p.patient_id.clone(),
            sex: p.sex,
            age_years: p.age_years,
            height_m: p.height_m,
            weight_kg: p.weight_kg,
            bmi: p.bmi(),
            race: p.race.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureEntry {
    pub id: u16,
    pub name: String,
    pub volume_ml: f64,
    /// Relative to the catalog root; set once the mesh is extracted.
    pub mesh_path: Option<String>,
    /// Where the voxel mask comes from: `<grid path>#label=<id>`.
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelPhantom {
    pub spacing_mm: f64,
    pub path: String,
}

/// On-disk description of one phantom, `phantoms/<phantom_id>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub phantom_id: String,
    pub scan_id: String,
    pub patient: PatientSnapshot,
    /// Structures with nonzero volume, ascending ID.
    pub structures: Vec<StructureEntry>,
    pub qc: QcOutcome,
    pub review_rating: Option<u8>,
    #[serde(default)]
    pub voxel_phantoms: Vec<VoxelPhantom>,
    /// Mesh extraction settings, when meshes exist.
    #[serde(default)]
    pub smoothing: Option<(f64, usize)>,
    pub pipeline_version: String,
    pub created_at: DateTime<Utc>,
}

impl PhantomManifest {
    pub fn status(&self) -> FinalStatus {
        self.qc.final_status
    }

    pub fn structure(&self, id: u16) -> Option<&StructureEntry> {
        self.structures.iter().find(|s| s.id == id)
    }
}

/// Conjunctive phantom filter. Ranges are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomFilter {
    pub sex: Option<Sex>,
    pub age_min: Option<f64>,
    pub age_max: Option<f64>,
    pub race: Option<String>,
    pub bmi_min: Option<f64>,
    pub bmi_max: Option<f64>,
    /// Structure that must have nonzero volume.
    pub structure: Option<u16>,
    /// Include phantoms whose QC status is not accepted.
    pub include_all: bool,
}

impl PhantomFilter {
    pub fn validate(&self) -> Result<()> {
        for (what, lo, hi) in [
            ("age", self.age_min, self.age_max),
            ("bmi", self.bmi_min, self.bmi_max),
        ] {
            if [lo, hi].iter().flatten().any(|v| v.is_nan()) {
                return Err(Error::InvalidArgument(format!("{what} bound is NaN")));
            }
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo > hi {
                    return Err(Error::InvalidArgument(format!(
                        "{what} range is empty: min {lo} > max {hi}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// A phantom without height or weight never matches a BMI bound.
    pub fn matches(&self, m: &PhantomManifest) -> bool {
        let p = &m.patient;
        let in_range = |v: f64, lo: Option<f64>, hi: Option<f64>| {
            lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v <= hi)
        };
        (self.include_all || m.status() == FinalStatus::Accepted)
            && self.sex.is_none_or(|s| s == p.sex)
            && in_range(p.age_years, self.age_min, self.age_max)
            && self
                .race
                .as_deref()
                .is_none_or(|r| r.eq_ignore_ascii_case(&p.race))
            && (self.bmi_min.is_none() && self.bmi_max.is_none()
                || p.bmi.is_some_and(|b| in_range(b, self.bmi_min, self.bmi_max)))
            && self.structure.is_none_or(|id| m.structure(id).is_some())
    }
}

/// Manifests matching `filter`, in phantom-ID order.
pub fn filter_manifests<'a>(
    manifests: &'a BTreeMap<String, PhantomManifest>,
    filter: &PhantomFilter,
) -> Result<Vec<&'a PhantomManifest>> {
    filter.validate()?;
    Ok(manifests.values().filter(|m| filter.matches(m)).collect())
}
