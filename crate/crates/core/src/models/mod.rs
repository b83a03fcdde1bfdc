//! The bundled models: a Bayesian two-sample t-test on the standardized
//! effect size and a Bayesian linear regression, with Savage–Dickey Bayes
//! factors, posterior summaries and data simulators.

mod regression;
mod ttest;

pub use regression::{
    coefficient_fbst, fit_regression, prior_predictive, regression_log_posterior, RegressionData, RegressionFit,
    RegressionPosterior, RegressionSpec, SIGMA_NAME,
};
pub use ttest::{
    simulate_two_groups, ttest_joint_log_posterior, ttest_log_relative_likelihood, ttest_marginal_from_draws,
    ttest_mcmc, ttest_posterior_grid, ttest_posterior_grid_from_t, JointTTestPosterior, TTestSpec, TwoGroupData,
    TwoGroupSummary,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{DensityError, GriddedDensity};
use crate::distributions::{DistributionError, DistributionSpec};
use crate::evalue::EValueError;
use crate::mcmc::{self, McmcError, ParameterDraws};

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid model settings: {0}")]
    InvalidSpec(String),
    #[error("posterior grid too narrow: estimated mass {mass:.2e} beyond the grid edges (limit 1e-4)")]
    GridTooNarrow { mass: f64 },
    #[error("prior density is zero at θ₀ = {theta0}")]
    ZeroPrior { theta0: f64 },
    #[error("design matrix has rank {rank} but {columns} columns")]
    RankDeficient { rank: usize, columns: usize },
    #[error("dimension mismatch: expected {expected} parameters, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown coefficient {0:?}")]
    UnknownCoefficient(String),
    #[error("sampler did not converge: {reason}")]
    ConvergenceFailure { reason: String, fit: Box<RegressionFit> },
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    EValue(#[from] EValueError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// BF₀₁ = p(θ₀|x) / p(θ₀), the Savage–Dickey density ratio.
pub fn savage_dickey_bf01(posterior: &GriddedDensity, prior: &DistributionSpec, theta0: f64) -> Result<f64> {
    let prior_at = prior.pdf(theta0)?;
    if !(prior_at > 0.0) {
        return Err(ModelError::ZeroPrior { theta0 });
    }
    Ok(posterior.interpolate(theta0) / prior_at)
}

/// Marginal summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub hpd95: (f64, f64),
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Summary of a gridded marginal.
pub fn summarize_grid(name: &str, gd: &GriddedDensity) -> Result<PosteriorSummary> {
    Ok(PosteriorSummary {
        name: name.to_string(),
        mean: gd.mean(),
        sd: gd.sd(),
        q10: gd.quantile(0.1),
        q50: gd.quantile(0.5),
        q90: gd.quantile(0.9),
        hpd95: gd.hpd_interval(0.95)?,
        rhat: None,
        ess: None,
    })
}

/// Type-7 (linear interpolation) quantile of sorted values.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Shortest interval containing `ceil(mass·n)` of the sorted draws.
pub fn hpd_from_samples(draws: &[f64], mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(DensityError::InvalidMass(mass).into());
    }
    if draws.len() < 2 {
        return Err(ModelError::InvalidData("need at least 2 draws for an interval".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let (i, _) = (0..=n - m)
        .map(|i| (i, sorted[i + m - 1] - sorted[i]))
        .fold((0, f64::INFINITY), |acc, (i, w)| if w < acc.1 { (i, w) } else { acc });
    Ok((sorted[i], sorted[i + m - 1]))
}

/// Per-parameter summaries with R̂ (when at least two chains are present)
/// and ESS.
pub fn summarize_draws(draws: &ParameterDraws) -> Result<Vec<PosteriorSummary>> {
    let rhat = mcmc::gelman_rubin(draws).ok();
    let ess = mcmc::effective_sample_size(draws);
    draws
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut x = draws.column(j);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let hpd95 = hpd_from_samples(&x, 0.95)?;
            x.sort_by(f64::total_cmp);
            Ok(PosteriorSummary {
                name: name.clone(),
                mean,
                sd,
                q10: sorted_quantile(&x, 0.1),
                q50: sorted_quantile(&x, 0.5),
                q90: sorted_quantile(&x, 0.9),
                hpd95,
                rhat: rhat.as_ref().map(|r| r[j]),
                ess: Some(ess[j]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{linspace, normalize_grid};

    #[test]
    fn savage_dickey_prior_as_posterior() {
        let prior = DistributionSpec::cauchy(0.0, 0.5f64.sqrt()).unwrap();
        let grid = linspace(-200.0, 200.0, 400_001);
        let raw: Vec<f64> = grid.iter().map(|&x| prior.pdf(x).unwrap()).collect();
        let gd = normalize_grid(&grid, &raw).unwrap();
        // truncation at ±200 removes ~0.2% of the Cauchy mass
        let bf = savage_dickey_bf01(&gd, &prior, 0.0).unwrap();
        let truncated_mass = 1.0 - 2.0 / std::f64::consts::PI * (200.0 / 0.5f64.sqrt()).atan();
        assert!((bf * (1.0 - truncated_mass) - 1.0).abs() < 1e-6, "{bf}");
    }

    #[test]
    fn savage_dickey_far_posterior() {
        let grid = linspace(2.0, 8.0, 2001);
        let raw: Vec<f64> = grid
            .iter()
            .map(|x| (-0.5 * ((x - 5.0) / 0.3f64).powi(2)).exp())
            .collect();
        let gd = normalize_grid(&grid, &raw).unwrap();
        let prior = DistributionSpec::normal(0.0, 1.0).unwrap();
        let bf01 = savage_dickey_bf01(&gd, &prior, 0.0).unwrap();
        assert_eq!(bf01, 0.0);
        let uniform = DistributionSpec::uniform(1.0, 2.0).unwrap();
        assert!(matches!(
            savage_dickey_bf01(&gd, &uniform, 0.0),
            Err(ModelError::ZeroPrior { .. })
        ));
    }

    #[test]
    fn hpd_from_samples_of_normal() {
        let draws = DistributionSpec::normal(1.0, 2.0).unwrap().sample(200_000, 3).unwrap();
        let (lo, hi) = hpd_from_samples(&draws, 0.95).unwrap();
        assert!((lo - (1.0 - 1.96 * 2.0)).abs() < 0.05, "{lo}");
        assert!((hi - (1.0 + 1.96 * 2.0)).abs() < 0.05, "{hi}");
    }

    #[test]
    fn hpd_from_samples_skewed() {
        // exponential: the shortest 90% interval starts at 0
        let draws = DistributionSpec::exponential(1.0).unwrap().sample(100_000, 4).unwrap();
        let (lo, hi) = hpd_from_samples(&draws, 0.9).unwrap();
        assert!(lo < 1e-3);
        assert!((hi - 10f64.ln()).abs() < 0.05, "{hi}");
    }

    #[test]
    fn sorted_quantile_interpolates() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(sorted_quantile(&x, 0.5), 3.0);
        assert_eq!(sorted_quantile(&x, 0.1), 1.4);
        assert_eq!(sorted_quantile(&x, 1.0), 5.0);
    }
}
