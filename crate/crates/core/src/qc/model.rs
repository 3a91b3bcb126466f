//! Population volume models and highest-density-region outlier scores.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::dip::{dip_statistic, DipNull, DipNullDistribution};
use super::gmm::{gmm_fit_em, GmmParams};
use super::{quantile_sorted, structure_seed, variance};
use crate::error::{Error, Result};

const MC_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub alpha: f64,
    pub bootstrap_draws: usize,
    pub dip_null: DipNull,
    /// Below this many nonzero samples the model is a widened unimodal fit.
    pub min_samples: usize,
    pub mc_draws: usize,
    pub base_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            alpha: 0.05,
            bootstrap_draws: 2000,
            dip_null: DipNull::Normal,
            min_samples: 20,
            mc_draws: 10_000,
            base_seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unimodal,
    Multimodal,
    /// Every cohort sample was zero; nothing to fit.
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodalParams {
    pub median: f64,
    pub robust_sigma: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeModel {
    pub structure_id: u16,
    pub n_samples: usize,
    pub n_nonzero: usize,
    pub zero_prevalence: f64,
    pub dip: Option<DipResult>,
    pub kind: ModelKind,
    pub unimodal_params: Option<UnimodalParams>,
    pub gmm_params: Option<GmmParams>,
    pub mc_seed: u64,
    pub mc_draws: usize,
    pub low_confidence: bool,
    /// Sorted mixture densities of the Monte Carlo draws.
    #[serde(skip)]
    hdr_levels: OnceLock<Vec<f64>>,
}

impl VolumeModel {
    fn new(structure_id: u16, n_samples: usize, n_nonzero: usize, config: &ModelConfig) -> Self {
        VolumeModel {
            structure_id,
            n_samples,
            n_nonzero,
            zero_prevalence: (n_samples - n_nonzero) as f64 / n_samples as f64,
            dip: None,
            kind: ModelKind::Absent,
            unimodal_params: None,
            gmm_params: None,
            mc_seed: structure_seed(config.base_seed ^ MC_SALT, structure_id),
            mc_draws: config.mc_draws,
            low_confidence: false,
            hdr_levels: OnceLock::new(),
        }
    }

    fn hdr_levels(&self, gmm: &GmmParams) -> &[f64] {
        self.hdr_levels.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.mc_seed);
            let mut levels: Vec<f64> = (0..self.mc_draws)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut j = 0;
                    let mut acc = gmm.weights[0];
                    while u >= acc && j + 1 < gmm.k {
                        j += 1;
                        acc += gmm.weights[j];
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    gmm.pdf(gmm.means[j] + gmm.variances[j].sqrt() * z)
                })
                .collect();
            levels.sort_by(f64::total_cmp);
            levels
        })
    }
}

/// Fits a structure's population model from cohort volumes (zeros included).
pub fn fit_volume_model(
    samples: &[f64],
    structure_id: u16,
    config: &ModelConfig,
) -> Result<VolumeModel> {
    if samples.is_empty() {
        return Err(Error::Stats(format!("structure {structure_id}: no samples")));
    }
    if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Stats(format!(
            "structure {structure_id}: volumes must be finite and nonnegative"
        )));
    }
    if config.mc_draws == 0 {
        return Err(Error::Stats("mc_draws must be positive".into()));
    }
    let mut nonzero: Vec<f64> = samples.iter().copied().filter(|&v| v > 0.0).collect();
    nonzero.sort_by(f64::total_cmp);
    let mut model = VolumeModel::new(structure_id, samples.len(), nonzero.len(), config);
    if nonzero.is_empty() {
        return Ok(model);
    }

    model.kind = ModelKind::Unimodal;
    let robust = robust_params(&nonzero);
    if nonzero.len() < config.min_samples.max(super::MIN_DIP_SAMPLES) {
        model.low_confidence = true;
        let sd = variance(&nonzero).sqrt();
        let sigma = robust.robust_sigma.max(sd).max(0.1 * robust.median);
        model.unimodal_params = Some(UnimodalParams {
            robust_sigma: 2.0 * sigma,
            ..robust
        });
        return Ok(model);
    }

    let statistic = dip_statistic(&nonzero)?;
    let null = DipNullDistribution::simulate(
        nonzero.len(),
        config.bootstrap_draws,
        structure_seed(config.base_seed, structure_id),
        config.dip_null,
    )?;
    let p_value = null.p_value(statistic);
    model.dip = Some(DipResult { statistic, p_value });

    if p_value < config.alpha {
        model.kind = ModelKind::Multimodal;
        let mut best: Option<(f64, GmmParams)> = None;
        for k in [2, 3] {
            let Ok(fit) = gmm_fit_em(&nonzero, k) else {
                continue;
            };
            let b = fit.bic(nonzero.len());
            if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
                best = Some((b, fit.params));
            }
        }
        match best {
            Some((_, params)) => model.gmm_params = Some(params),
            None => {
                return Err(Error::Stats(format!(
                    "structure {structure_id}: mixture fit failed"
                )))
            }
        }
    } else {
        model.unimodal_params = Some(robust);
    }
    Ok(model)
}

fn robust_params(sorted: &[f64]) -> UnimodalParams {
    let median = quantile_sorted(sorted, 0.5);
    let q1 = quantile_sorted(sorted, 0.25);
    let q3 = quantile_sorted(sorted, 0.75);
    // Relative floor keeps identical cohorts finite and the scale symmetry intact.
    let robust_sigma = ((q3 - q1) / 1.349).max(1e-6 * median.abs());
    UnimodalParams {
        median,
        robust_sigma,
        q1,
        q3,
    }
}

/// `Pr[f(X) > f(x)]` under the model; zero volumes score `1 - zero_prevalence`.
pub fn outlier_probability(model: &VolumeModel, x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "volume must be finite and nonnegative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0 - model.zero_prevalence);
    }
    match model.kind {
        // Presence where the cohort never had the structure.
        ModelKind::Absent => Ok(1.0),
        ModelKind::Unimodal => {
            let p = model
                .unimodal_params
                .as_ref()
                .ok_or_else(|| Error::Stats("unimodal model without parameters".into()))?;
            let z = (x - p.median).abs() / p.robust_sigma;
            Ok(erf(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
        }
        ModelKind::Multimodal => {
            let gmm = model
                .gmm_params
                .as_ref()
                .ok_or_else(|| Error::Stats("multimodal model without mixture".into()))?;
            let levels = model.hdr_levels(gmm);
            let fx = gmm.pdf(x);
            let at_or_below = levels.partition_point(|&d| d <= fx);
            Ok((levels.len() - at_or_below) as f64 / levels.len() as f64)
        }
    }
}
