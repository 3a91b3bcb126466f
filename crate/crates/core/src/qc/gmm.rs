//! One-dimensional Gaussian mixtures fitted by expectation-maximization.
//!
//! Initialization is deterministic: component `j` of `k` starts at the
//! `(j - 0.5)/k` sample quantile with equal weights and the pooled sample
//! variance. Every step is equivariant under `x -> c·x`, so fitting scaled
//! data scales means by `c` and variances by `c²`.

use serde::{Deserialize, Serialize};

use super::{quantile_sorted, variance};
use crate::error::{Error, Result};

pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERATIONS: usize = 500;
/// Variance floor as a fraction of the sample variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GmmParams {
    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * normal_pdf(x, *m, *v))
            .sum()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_pdf(x)).sum()
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.k)
            .map(|j| self.weights[j].ln() + normal_log_pdf(x, self.means[j], self.variances[j]))
            .collect();
        log_sum_exp(&terms)
    }

    /// Free parameters: k means, k variances, k - 1 weights.
    pub fn parameter_count(&self) -> usize {
        3 * self.k - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub params: GmmParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the initial parameters followed by one entry per
    /// EM iteration.
    pub trace: Vec<f64>,
}

impl GmmFit {
    pub fn bic(&self, n: usize) -> f64 {
        bic(self.log_likelihood, self.params.parameter_count(), n)
    }
}

pub fn bic(log_likelihood: f64, parameters: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + parameters as f64 * (n as f64).ln()
}

pub(crate) fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - d * d / (2.0 * var)
}

pub(crate) fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    normal_log_pdf(x, mean, var).exp()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// BIC of the single maximum-likelihood Gaussian, the `k = 1` baseline.
pub fn single_gaussian_bic(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Stats("need at least 2 samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = variance(samples);
    if var <= 0.0 {
        return Err(Error::Stats("degenerate samples: all values equal".into()));
    }
    let ll: f64 = samples.iter().map(|&x| normal_log_pdf(x, mean, var)).sum();
    Ok(bic(ll, 2, n))
}

/// Fits a `k`-component mixture, `k ∈ {2, 3}`, requiring `n >= 5k`.
pub fn gmm_fit_em(samples: &[f64], k: usize) -> Result<GmmFit> {
    if !(2..=3).contains(&k) {
        return Err(Error::Stats(format!("mixture size must be 2 or 3, got {k}")));
    }
    let n = samples.len();
    if n < 5 * k {
        return Err(Error::Stats(format!(
            "{k}-component mixture needs at least {} samples, got {n}",
            5 * k
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("samples must be finite".into()));
    }
    let total_var = variance(samples);
    if total_var <= 0.0 {
        return Err(Error::Stats("degenerate samples: all values equal".into()));
    }
    let floor = VARIANCE_FLOOR * total_var;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut params = GmmParams {
        k,
        weights: vec![1.0 / k as f64; k],
        means: (0..k)
            .map(|j| quantile_sorted(&sorted, (j as f64 + 0.5) / k as f64))
            .collect(),
        variances: vec![total_var; k],
    };

    let mut resp = vec![0.0; n * k];
    let mut log_terms = vec![0.0; k];
    let mut ll = e_step(&params, samples, &mut resp, &mut log_terms);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < EM_MAX_ITERATIONS {
        m_step(&mut params, samples, &resp, floor);
        iterations += 1;
        let next = e_step(&params, samples, &mut resp, &mut log_terms);
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < EM_TOLERANCE {
            converged = true;
            break;
        }
    }

    Ok(GmmFit {
        params,
        log_likelihood: ll,
        iterations,
        converged,
        trace,
    })
}

/// Fills responsibilities and returns the log-likelihood of `params`.
fn e_step(params: &GmmParams, samples: &[f64], resp: &mut [f64], terms: &mut [f64]) -> f64 {
    let k = params.k;
    let mut ll = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        for j in 0..k {
            terms[j] = params.weights[j].ln()
                + normal_log_pdf(x, params.means[j], params.variances[j]);
        }
        let lse = log_sum_exp(terms);
        ll += lse;
        for j in 0..k {
            resp[i * k + j] = (terms[j] - lse).exp();
        }
    }
    ll
}

fn m_step(params: &mut GmmParams, samples: &[f64], resp: &[f64], floor: f64) {
    let k = params.k;
    let n = samples.len() as f64;
    for j in 0..k {
        let nk: f64 = (0..samples.len()).map(|i| resp[i * k + j]).sum();
        if nk <= f64::MIN_POSITIVE {
            // Collapsed component: drop its weight, keep its location.
            params.weights[j] = 0.0;
            continue;
        }
        let mean = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| resp[i * k + j] * x)
            .sum::<f64>()
            / nk;
        let var = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| resp[i * k + j] * (x - mean) * (x - mean))
            .sum::<f64>()
            / nk;
        params.weights[j] = nk / n;
        params.means[j] = mean;
        params.variances[j] = var.max(floor);
    }
    let total: f64 = params.weights.iter().sum();
    for w in params.weights.iter_mut() {
        *w /= total;
    }
}
