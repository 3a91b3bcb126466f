//! Quality control: unimodality testing, population volume models, outlier
//! probabilities and the per-scan QC cascade.

mod checks;
mod dip;
mod gmm;
mod model;
mod pipeline;

pub use checks::{
    age_check, relative_difference, select_unique_scan, statistical_check, symmetry_check,
    DedupCandidate, DiscrepantPair, StatisticalResult, SymmetryResult,
};
pub use dip::{
    dip_pvalue, dip_statistic, DipNull, DipNullDistribution, MIN_BOOTSTRAP, MIN_DIP_SAMPLES,
};
pub use gmm::{
    bic, gmm_fit_em, single_gaussian_bic, GmmFit, GmmParams, EM_MAX_ITERATIONS, EM_TOLERANCE,
    VARIANCE_FLOOR,
};
pub use model::{
    fit_volume_model, outlier_probability, DipResult, ModelConfig, ModelKind, UnimodalParams,
    VolumeModel,
};
pub use pipeline::{
    apply_reviews, run_qc_pipeline, FinalStatus, FunnelReport, QcOutcome, QcRun, Review, Stage,
    StageReport, Verdict, ZeroVolumeResult,
};

/// Type-7 (linear interpolation) quantile of an ascending, nonempty sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Population variance (divides by n).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Mixes a base seed with a structure id into an independent stream seed.
pub fn structure_seed(base: u64, structure_id: u16) -> u64 {
    splitmix64(base ^ splitmix64(u64::from(structure_id).wrapping_add(0x5851_F42D_4C95_7F2D)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.25), 1.75);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn seeds_differ_per_structure() {
        assert_ne!(structure_seed(1, 5), structure_seed(1, 6));
        assert_ne!(structure_seed(1, 5), structure_seed(2, 5));
        assert_eq!(structure_seed(9, 80), structure_seed(9, 80));
    }
}
