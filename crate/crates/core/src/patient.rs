use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Sex;

/// Demographics of one patient and the scans acquired from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub age_years: f64,
    #[serde(default)]
    pub height_m: Option<f64>,
    #[serde(default)]
    pub weight_kg: Option<f64>,
    #[serde(default)]
    pub race: String,
    #[serde(default)]
    pub scans: Vec<String>,
}

impl PatientRecord {
    pub fn bmi(&self) -> Option<f64> {
        match (self.height_m, self.weight_kg) {
            (Some(h), Some(w)) if h > 0.0 => Some(w / (h * h)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::InvalidArgument("empty patient_id".into()));
        }
        if !self.age_years.is_finite() || self.age_years < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "patient {}: age must be >= 0, got {}",
                self.patient_id, self.age_years
            )));
        }
        for (what, v) in [("height_m", self.height_m), ("weight_kg", self.weight_kg)] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "patient {}: {what} must be positive, got {v}",
                        self.patient_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct MetaRow {
    scan_id: String,
    patient_id: String,
    sex: String,
    age_years: f64,
    height_m: Option<f64>,
    weight_kg: Option<f64>,
    #[serde(default)]
    race: String,
}

/// Patient metadata from a JSON array of records or a CSV with one row per
/// scan (`scan_id,patient_id,sex,age_years,height_m,weight_kg,race`).
pub fn load_patient_metadata(path: &Path) -> Result<Vec<PatientRecord>> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let records = if is_csv {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let mut by_id: BTreeMap<String, PatientRecord> = BTreeMap::new();
        for row in rdr.deserialize::<MetaRow>() {
            let row = row.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
            let rec = PatientRecord {
                patient_id: row.patient_id.clone(),
                sex: row.sex.parse()?,
                age_years: row.age_years,
                height_m: row.height_m,
                weight_kg: row.weight_kg,
                race: row.race,
                scans: Vec::new(),
            };
            let entry = by_id.entry(row.patient_id).or_insert(rec.clone());
            if entry.sex != rec.sex || entry.age_years != rec.age_years {
                return Err(Error::InvalidArgument(format!(
                    "conflicting demographics for patient {}",
                    rec.patient_id
                )));
            }
            entry.scans.push(row.scan_id);
        }
        by_id.into_values().collect()
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str::<Vec<PatientRecord>>(&text)?
    };
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}
