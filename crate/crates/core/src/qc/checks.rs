//! Per-scan QC checks and per-patient deduplication.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumetry::VolumeTable;

/// Passes when `age_years >= min_age_years`.
pub fn age_check(age_years: f64, min_age_years: f64) -> bool {
    age_years >= min_age_years
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepantPair {
    pub left: u16,
    pub right: u16,
    pub left_ml: f64,
    pub right_ml: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryResult {
    pub discrepant_pairs: Vec<DiscrepantPair>,
    pub pass: bool,
}

/// `|a - b| / max(a, b)`, or `None` when both are zero.
pub fn relative_difference(a: u64, b: u64) -> Option<f64> {
    let hi = a.max(b);
    (hi > 0).then(|| a.abs_diff(b) as f64 / hi as f64)
}

/// Flags pairs whose relative difference exceeds `rel_diff_max`; passes with at
/// most `max_discrepancies` flagged. Computed on voxel counts so that ratios
/// like 50/100 are exact.
pub fn symmetry_check(
    vt: &VolumeTable,
    pairs: &[(u16, u16)],
    rel_diff_max: f64,
    max_discrepancies: usize,
) -> Result<SymmetryResult> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("symmetry check needs at least one pair".into()));
    }
    let discrepant_pairs: Vec<DiscrepantPair> = pairs
        .iter()
        .filter_map(|&(l, r)| {
            let d = relative_difference(vt.count(l), vt.count(r))?;
            (d > rel_diff_max).then(|| DiscrepantPair {
                left: l,
                right: r,
                left_ml: vt.volume_ml(l),
                right_ml: vt.volume_ml(r),
                rel_diff: d,
            })
        })
        .collect();
    let pass = discrepant_pairs.len() <= max_discrepancies;
    Ok(SymmetryResult {
        discrepant_pairs,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticalResult {
    pub p_out: BTreeMap<u16, f64>,
    pub flagged_ids: Vec<u16>,
    pub skull_flag: bool,
    pub pass: bool,
}

/// Flags structures with `p_out > threshold`; fails with more than
/// `max_flagged` flags. Two or more skull-trio flags set `skull_flag`, which
/// does not by itself fail the scan.
pub fn statistical_check(
    p_out: &BTreeMap<u16, f64>,
    skull_trio: Option<[u16; 3]>,
    threshold: f64,
    max_flagged: usize,
) -> StatisticalResult {
    let flagged_ids: Vec<u16> = p_out
        .iter()
        .filter(|(_, &p)| p > threshold)
        .map(|(&id, _)| id)
        .collect();
    let skull_flag = skull_trio.is_some_and(|trio| {
        trio.iter()
            .filter(|id| p_out.get(id).is_some_and(|&p| p > threshold))
            .count()
            >= 2
    });
    StatisticalResult {
        p_out: p_out.clone(),
        pass: flagged_ids.len() <= max_flagged,
        flagged_ids,
        skull_flag,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupCandidate {
    pub scan_id: String,
    pub mean_p_out: f64,
}

impl DedupCandidate {
    /// Averages `p_out` over structures with nonzero volume; `+∞` when none
    /// were scored.
    pub fn new(scan_id: &str, p_out: &BTreeMap<u16, f64>, present: &BTreeSet<u16>) -> Self {
        let scored: Vec<f64> = p_out
            .iter()
            .filter(|(id, _)| present.contains(id))
            .map(|(_, &p)| p)
            .collect();
        let mean_p_out = if scored.is_empty() {
            f64::INFINITY
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        DedupCandidate {
            scan_id: scan_id.to_string(),
            mean_p_out,
        }
    }
}

/// Scan with the lowest mean `p_out`; ties go to the smallest scan id.
pub fn select_unique_scan(scans: &[DedupCandidate]) -> Result<&str> {
    scans
        .iter()
        .min_by(|a, b| {
            a.mean_p_out
                .total_cmp(&b.mean_p_out)
                .then_with(|| a.scan_id.cmp(&b.scan_id))
        })
        .map(|c| c.scan_id.as_str())
        .ok_or_else(|| Error::InvalidArgument("no scans to choose from".into()))
}
