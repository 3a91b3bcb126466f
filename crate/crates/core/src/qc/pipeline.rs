//! The QC cascade: age, symmetry, zero-volume, statistical, review, dedup.
//!
//! Stages 1–4 depend only on the cohort, the taxonomy and the config.
//! Stages 5–6 are a pure function of those results plus the review verdicts,
//! which is what lets the catalog replay its review log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    age_check, select_unique_scan, statistical_check, symmetry_check, DedupCandidate,
    StatisticalResult, SymmetryResult,
};
use super::model::{fit_volume_model, outlier_probability, VolumeModel};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::patient::PatientRecord;
use crate::taxonomy::{Sex, Taxonomy};
use crate::volumetry::{zero_volume_fraction, VolumeTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Age,
    Symmetry,
    ZeroVolume,
    Statistical,
    Review,
    Dedup,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Age,
        Stage::Symmetry,
        Stage::ZeroVolume,
        Stage::Statistical,
        Stage::Review,
        Stage::Dedup,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Accepted,
    RejectedAge,
    RejectedSymmetry,
    RejectedZeroVolume,
    RejectedStatistical,
    RejectedReview,
    PendingReview,
    SupersededDuplicate,
}

impl FinalStatus {
    /// Stage that produced a rejection, if any.
    pub fn rejected_at(self) -> Option<Stage> {
        match self {
            FinalStatus::RejectedAge => Some(Stage::Age),
            FinalStatus::RejectedSymmetry => Some(Stage::Symmetry),
            FinalStatus::RejectedZeroVolume => Some(Stage::ZeroVolume),
            FinalStatus::RejectedStatistical => Some(Stage::Statistical),
            FinalStatus::RejectedReview => Some(Stage::Review),
            FinalStatus::SupersededDuplicate => Some(Stage::Dedup),
            FinalStatus::Accepted | FinalStatus::PendingReview => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FinalStatus::Accepted => "accepted",
            FinalStatus::RejectedAge => "rejected_age",
            FinalStatus::RejectedSymmetry => "rejected_symmetry",
            FinalStatus::RejectedZeroVolume => "rejected_zero_volume",
            FinalStatus::RejectedStatistical => "rejected_statistical",
            FinalStatus::RejectedReview => "rejected_review",
            FinalStatus::PendingReview => "pending_review",
            FinalStatus::SupersededDuplicate => "superseded_duplicate",
        }
    }

    /// Passed stages 1–4 and is subject to review and dedup.
    pub fn reached_review(self) -> bool {
        matches!(
            self,
            FinalStatus::Accepted
                | FinalStatus::RejectedReview
                | FinalStatus::PendingReview
                | FinalStatus::SupersededDuplicate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approved,
    Flagged,
    Rejected,
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approved" => Ok(Verdict::Approved),
            "flagged" => Ok(Verdict::Flagged),
            "rejected" => Ok(Verdict::Rejected),
            other => Err(Error::InvalidArgument(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub verdict: Verdict,
    pub rating: u8,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroVolumeResult {
    pub fraction: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcOutcome {
    pub scan_id: String,
    pub patient_id: String,
    pub age_pass: bool,
    pub symmetry: Option<SymmetryResult>,
    pub zero_volume: Option<ZeroVolumeResult>,
    pub statistical: Option<StatisticalResult>,
    /// Mean `p_out` over present structures, the dedup score.
    pub mean_p_out: Option<f64>,
    pub review: Option<Review>,
    pub final_status: FinalStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub entrants: usize,
    pub passed: usize,
    pub rejected: usize,
    /// Review stage only: scans still awaiting a verdict.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pending: usize,
    pub rejected_ids: Vec<String>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub total_scans: usize,
    pub stages: Vec<StageReport>,
    pub accepted: usize,
    pub pending_review: usize,
    pub skull_flagged: Vec<String>,
    pub warnings: Vec<String>,
}

impl FunnelReport {
    pub fn from_outcomes(outcomes: &BTreeMap<String, QcOutcome>, warnings: Vec<String>) -> Self {
        let mut remaining = outcomes.len();
        let mut stages = Vec::with_capacity(Stage::ALL.len());
        for stage in Stage::ALL {
            let rejected_ids: Vec<String> = outcomes
                .values()
                .filter(|o| o.final_status.rejected_at() == Some(stage))
                .map(|o| o.scan_id.clone())
                .collect();
            let pending = if stage == Stage::Review {
                count(outcomes, FinalStatus::PendingReview)
            } else {
                0
            };
            let entrants = remaining;
            let passed = entrants - rejected_ids.len() - pending;
            remaining = passed;
            stages.push(StageReport {
                stage,
                entrants,
                passed,
                rejected: rejected_ids.len(),
                pending,
                rejected_ids,
            });
        }
        FunnelReport {
            total_scans: outcomes.len(),
            stages,
            accepted: count(outcomes, FinalStatus::Accepted),
            pending_review: count(outcomes, FinalStatus::PendingReview),
            skull_flagged: outcomes
                .values()
                .filter(|o| o.statistical.as_ref().is_some_and(|s| s.skull_flag))
                .map(|o| o.scan_id.clone())
                .collect(),
            warnings,
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageReport {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .expect("every stage is reported")
    }

    /// Fixed-width text table of the funnel.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "stage", "entrants", "passed", "rejected", "pending", "pass%"
        );
        for s in &self.stages {
            let pct = if s.entrants == 0 {
                100.0
            } else {
                100.0 * s.passed as f64 / s.entrants as f64
            };
            let name = serde_json::to_value(s.stage).expect("stage serializes");
            out.push_str(&format!(
                "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8.1}\n",
                name.as_str().unwrap_or_default(),
                s.entrants,
                s.passed,
                s.rejected,
                s.pending,
                pct
            ));
        }
        out.push_str(&format!(
            "accepted {} of {} scans; {} pending review\n",
            self.accepted, self.total_scans, self.pending_review
        ));
        out
    }
}

fn count(outcomes: &BTreeMap<String, QcOutcome>, status: FinalStatus) -> usize {
    outcomes.values().filter(|o| o.final_status == status).count()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QcRun {
    pub outcomes: BTreeMap<String, QcOutcome>,
    pub funnel: FunnelReport,
    pub models: Vec<VolumeModel>,
    pub warnings: Vec<String>,
}

struct ScanInput<'a> {
    scan_id: &'a str,
    patient: &'a PatientRecord,
    volumes: &'a VolumeTable,
}

/// Runs the cascade on every scan of every patient. `reviews` holds verdicts
/// already on record; `jobs = 0` uses all cores. The result does not depend
/// on `jobs`.
pub fn run_qc_pipeline(
    patients: &[PatientRecord],
    volumes: &BTreeMap<String, VolumeTable>,
    taxonomy: &Taxonomy,
    config: &PipelineConfig,
    reviews: &BTreeMap<String, Review>,
    jobs: usize,
) -> Result<QcRun> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(patients, volumes, taxonomy, config, reviews))
}

fn run_inner(
    patients: &[PatientRecord],
    volumes: &BTreeMap<String, VolumeTable>,
    taxonomy: &Taxonomy,
    config: &PipelineConfig,
    reviews: &BTreeMap<String, Review>,
) -> Result<QcRun> {
    let scans = collect_scans(patients, volumes)?;
    let th = &config.thresholds;
    let mut warnings = Vec::new();
    let mut outcomes: BTreeMap<String, QcOutcome> = BTreeMap::new();

    let pairs = taxonomy.symmetric_pairs();
    if pairs.is_empty() {
        warnings.push("taxonomy declares no symmetric pairs; symmetry stage skipped".into());
    }
    let expected_by_sex: BTreeMap<Sex, BTreeSet<u16>> = [Sex::Male, Sex::Female, Sex::Unknown]
        .into_iter()
        .map(|s| (s, taxonomy.expected_structures(s)))
        .collect();

    let mut survivors: Vec<&ScanInput> = Vec::new();
    for scan in &scans {
        let mut o = QcOutcome {
            scan_id: scan.scan_id.to_string(),
            patient_id: scan.patient.patient_id.clone(),
            age_pass: age_check(scan.patient.age_years, th.min_age_years),
            symmetry: None,
            zero_volume: None,
            statistical: None,
            mean_p_out: None,
            review: None,
            final_status: FinalStatus::PendingReview,
        };
        if !o.age_pass {
            o.final_status = FinalStatus::RejectedAge;
            outcomes.insert(o.scan_id.clone(), o);
            continue;
        }
        if !pairs.is_empty() {
            let sym = symmetry_check(
                scan.volumes,
                &pairs,
                th.symmetry_rel_diff,
                th.max_symmetry_discrepancies,
            )?;
            let pass = sym.pass;
            o.symmetry = Some(sym);
            if !pass {
                o.final_status = FinalStatus::RejectedSymmetry;
                outcomes.insert(o.scan_id.clone(), o);
                continue;
            }
        }
        let expected = &expected_by_sex[&scan.patient.sex];
        let fraction = if expected.is_empty() {
            0.0
        } else {
            zero_volume_fraction(scan.volumes, expected)?
        };
        let pass = fraction <= th.zero_volume_max;
        o.zero_volume = Some(ZeroVolumeResult { fraction, pass });
        if !pass {
            o.final_status = FinalStatus::RejectedZeroVolume;
            outcomes.insert(o.scan_id.clone(), o);
            continue;
        }
        outcomes.insert(o.scan_id.clone(), o);
        survivors.push(scan);
    }

    let mut models = Vec::new();
    if survivors.len() < config.stats.min_cohort {
        warnings.push(format!(
            "only {} scans reached the statistical stage (need {}); stage disabled",
            survivors.len(),
            config.stats.min_cohort
        ));
    } else {
        let model_cfg = config.model_config();
        let ids: Vec<u16> = taxonomy
            .structures()
            .iter()
            .filter(|s| s.expected)
            .map(|s| s.id)
            .collect();
        let fitted: Vec<Option<VolumeModel>> = ids
            .par_iter()
            .map(|&id| {
                let samples: Vec<f64> = survivors
                    .iter()
                    .filter(|s| expected_by_sex[&s.patient.sex].contains(&id))
                    .map(|s| s.volumes.volume_ml(id))
                    .collect();
                if samples.is_empty() {
                    return Ok(None);
                }
                fit_volume_model(&samples, id, &model_cfg).map(Some)
            })
            .collect::<Result<_>>()?;
        models = fitted.into_iter().flatten().collect();
        let by_id: BTreeMap<u16, &VolumeModel> =
            models.iter().map(|m| (m.structure_id, m)).collect();
        let low: Vec<u16> = models
            .iter()
            .filter(|m| m.low_confidence)
            .map(|m| m.structure_id)
            .collect();
        if !low.is_empty() {
            warnings.push(format!("low-confidence models for structures {low:?}"));
        }

        let scored: Vec<(StatisticalResult, f64)> = survivors
            .par_iter()
            .map(|scan| {
                let expected = &expected_by_sex[&scan.patient.sex];
                let mut p_out = BTreeMap::new();
                for id in expected {
                    if let Some(m) = by_id.get(id) {
                        p_out.insert(*id, outlier_probability(m, scan.volumes.volume_ml(*id))?);
                    }
                }
                let present: BTreeSet<u16> = p_out
                    .keys()
                    .copied()
                    .filter(|&id| scan.volumes.count(id) > 0)
                    .collect();
                let mean = DedupCandidate::new(scan.scan_id, &p_out, &present).mean_p_out;
                let res = statistical_check(
                    &p_out,
                    taxonomy.skull_trio(),
                    th.outlier_threshold,
                    th.max_flagged_organs,
                );
                Ok((res, mean))
            })
            .collect::<Result<_>>()?;
        for (scan, (res, mean)) in survivors.iter().zip(scored) {
            let o = outcomes.get_mut(scan.scan_id).expect("survivor recorded");
            if !res.pass {
                o.final_status = FinalStatus::RejectedStatistical;
            }
            o.mean_p_out = mean.is_finite().then_some(mean);
            o.statistical = Some(res);
        }
    }

    apply_reviews(&mut outcomes, reviews, config.review.required);
    let funnel = FunnelReport::from_outcomes(&outcomes, warnings.clone());
    Ok(QcRun {
        outcomes,
        funnel,
        models,
        warnings,
    })
}

fn collect_scans<'a>(
    patients: &'a [PatientRecord],
    volumes: &'a BTreeMap<String, VolumeTable>,
) -> Result<Vec<ScanInput<'a>>> {
    let mut seen_patients = BTreeSet::new();
    let mut scans = Vec::new();
    for p in patients {
        p.validate()?;
        if !seen_patients.insert(p.patient_id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate patient {}",
                p.patient_id
            )));
        }
        for sid in &p.scans {
            let vt = volumes
                .get(sid)
                .ok_or_else(|| Error::InvalidArgument(format!("scan {sid} has no volumes")))?;
            scans.push(ScanInput {
                scan_id: sid,
                patient: p,
                volumes: vt,
            });
        }
    }
    scans.sort_by(|a, b| a.scan_id.cmp(b.scan_id));
    if let Some(w) = scans.windows(2).find(|w| w[0].scan_id == w[1].scan_id) {
        return Err(Error::InvalidArgument(format!(
            "scan {} listed more than once",
            w[0].scan_id
        )));
    }
    if let Some(orphan) = volumes.keys().find(|k| {
        scans
            .binary_search_by(|s| s.scan_id.cmp(k.as_str()))
            .is_err()
    }) {
        return Err(Error::InvalidArgument(format!(
            "scan {orphan} has no patient record"
        )));
    }
    Ok(scans)
}

/// Recomputes review and dedup outcomes for every scan that reached review.
/// Approved and flagged verdicts accept; rejected verdicts reject. Without a
/// verdict a scan stays pending unless review is not required. Among each
/// patient's accepted scans only the lowest mean `p_out` stays accepted.
pub fn apply_reviews(
    outcomes: &mut BTreeMap<String, QcOutcome>,
    reviews: &BTreeMap<String, Review>,
    review_required: bool,
) {
    let mut accepted_by_patient: BTreeMap<String, Vec<DedupCandidate>> = BTreeMap::new();
    for o in outcomes.values_mut() {
        if !o.final_status.reached_review() {
            continue;
        }
        o.review = reviews.get(&o.scan_id).cloned();
        o.final_status = match o.review.as_ref().map(|r| r.verdict) {
            Some(Verdict::Approved | Verdict::Flagged) => FinalStatus::Accepted,
            Some(Verdict::Rejected) => FinalStatus::RejectedReview,
            None if review_required => FinalStatus::PendingReview,
            None => FinalStatus::Accepted,
        };
        if o.final_status == FinalStatus::Accepted {
            accepted_by_patient
                .entry(o.patient_id.clone())
                .or_default()
                .push(DedupCandidate {
                    scan_id: o.scan_id.clone(),
                    mean_p_out: o.mean_p_out.unwrap_or(f64::INFINITY),
                });
        }
    }
    for candidates in accepted_by_patient.values() {
        let keep = select_unique_scan(candidates).expect("nonempty group");
        for c in candidates {
            if c.scan_id != keep {
                outcomes
                    .get_mut(&c.scan_id)
                    .expect("candidate exists")
                    .final_status = FinalStatus::SupersededDuplicate;
            }
        }
    }
}
