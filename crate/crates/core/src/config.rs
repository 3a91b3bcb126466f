//! Pipeline configuration. Every threshold and seed lives here; TOML is the
//! primary format and JSON is accepted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qc::{DipNull, ModelConfig, MIN_BOOTSTRAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub symmetry_rel_diff: f64,
    pub max_symmetry_discrepancies: usize,
    pub zero_volume_max: f64,
    pub outlier_threshold: f64,
    pub max_flagged_organs: usize,
    pub min_age_years: f64,
    pub dip_alpha: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            symmetry_rel_diff: 0.5,
            max_symmetry_discrepancies: 2,
            zero_volume_max: 0.25,
            outlier_threshold: 0.9,
            max_flagged_organs: 2,
            min_age_years: 14.0,
            dip_alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub bootstrap_draws: usize,
    pub dip_null: DipNull,
    pub min_model_samples: usize,
    pub mc_draws: usize,
    /// Smallest cohort for which the statistical stage runs.
    pub min_cohort: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            bootstrap_draws: 2000,
            dip_null: DipNull::Normal,
            min_model_samples: 20,
            mc_draws: 10_000,
            min_cohort: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            lambda: 0.5,
            iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub qc: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { qc: 0x5EED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    /// When false, statistical survivors are accepted without a verdict.
    pub required: bool,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig { required: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub taxonomy: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub stats: StatsConfig,
    pub smoothing: SmoothingConfig,
    pub seeds: Seeds,
    pub review: ReviewConfig,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        let unit = |name: &str, v: f64, lo_open: bool| {
            let ok = v.is_finite() && v <= 1.0 && if lo_open { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} out of range: {v}")))
            }
        };
        unit("symmetry_rel_diff", t.symmetry_rel_diff, false)?;
        unit("zero_volume_max", t.zero_volume_max, false)?;
        unit("outlier_threshold", t.outlier_threshold, false)?;
        unit("dip_alpha", t.dip_alpha, true)?;
        if !t.min_age_years.is_finite() || t.min_age_years < 0.0 {
            return Err(Error::Config(format!(
                "min_age_years out of range: {}",
                t.min_age_years
            )));
        }
        let s = &self.stats;
        if s.bootstrap_draws < MIN_BOOTSTRAP {
            return Err(Error::Config(format!(
                "bootstrap_draws must be >= {MIN_BOOTSTRAP}"
            )));
        }
        if s.mc_draws == 0 {
            return Err(Error::Config("mc_draws must be positive".into()));
        }
        let l = self.smoothing.lambda;
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Config(format!("smoothing lambda out of [0, 1]: {l}")));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            alpha: self.thresholds.dip_alpha,
            bootstrap_draws: self.stats.bootstrap_draws,
            dip_null: self.stats.dip_null,
            min_samples: self.stats.min_model_samples,
            mc_draws: self.stats.mc_draws,
            base_seed: self.seeds.qc,
        }
    }
}
