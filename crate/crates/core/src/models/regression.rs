//! Bayesian linear regression y ~ N(Xβ, σ²I) with independent priors on the
//! intercept, the slopes and σ.
//!
//! The sampler works in whitened coordinates: θ = m + Lz, where m and LLᵀ
//! are the mean and covariance of a Gaussian approximation to the
//! posterior (the conditional posterior of β at the residual-variance
//! estimate, and variance 1/(2n) for log σ). Random-walk proposals on z are
//! then roughly isotropic whatever the scaling of the predictors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::distributions::DistributionSpec;
use crate::evalue::{ev_against_from_samples, Dimensions, EValueReport, NullSpec, ReferenceFunction};
use crate::mcmc::{self, rw_metropolis_multi, McmcConfig, ParameterDraws};
use crate::rng;
use crate::special::LN_SQRT_2PI;

pub const SIGMA_NAME: &str = "sigma";
const INTERCEPT_NAME: &str = "(Intercept)";

/// Design matrix with a leading column of ones, outcome and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    labels: Vec<String>,
    response: String,
}

impl RegressionData {
    /// Validates shapes, finiteness, the intercept column and full column
    /// rank (rank is not checked when there are no rows).
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, labels: Vec<String>, response: String) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(ModelError::InvalidData(format!(
                "{} design rows but {} outcomes",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 || labels.len() != x.ncols() {
            return Err(ModelError::InvalidData(format!(
                "{} labels for {} columns",
                labels.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidData(
                "design or outcome contains a non-finite value".into(),
            ));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(ModelError::InvalidData(
                "first design column must be the intercept (all ones)".into(),
            ));
        }
        if x.nrows() > 0 {
            let sv = x.clone().svd(false, false).singular_values;
            let tol = sv.max() * 1e-10 * x.nrows().max(x.ncols()) as f64;
            let rank = sv.iter().filter(|&&s| s > tol).count();
            if rank < x.ncols() {
                return Err(ModelError::RankDeficient {
                    rank,
                    columns: x.ncols(),
                });
            }
        }
        Ok(Self { x, y, labels, response })
    }

    /// Builds the design from named predictor columns, prepending the
    /// intercept.
    pub fn from_columns(response: &str, y: Vec<f64>, predictors: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = y.len();
        let mut labels = vec![INTERCEPT_NAME.to_string()];
        let mut x = DMatrix::from_element(n, predictors.len() + 1, 1.0);
        for (j, (name, col)) in predictors.into_iter().enumerate() {
            if col.len() != n {
                return Err(ModelError::InvalidData(format!(
                    "column {name:?} has {} rows, outcome has {n}",
                    col.len()
                )));
            }
            x.set_column(j + 1, &DVector::from_vec(col));
            labels.push(name);
        }
        Self::new(x, DVector::from_vec(y), labels, response.to_string())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of slopes (columns besides the intercept).
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    /// Coefficient labels followed by `sigma`.
    pub fn parameter_names(&self) -> Vec<String> {
        self.labels.iter().cloned().chain([SIGMA_NAME.to_string()]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub coefficient_prior: DistributionSpec,
    pub intercept_prior: DistributionSpec,
    pub sigma_prior: DistributionSpec,
    pub mcmc: McmcConfig,
    pub reference: ReferenceFunction,
    /// A fit with any R̂ above this fails.
    pub max_rhat: f64,
    /// A fit with any ESS below this many draws per chain fails.
    pub min_ess_per_chain: f64,
}

impl RegressionSpec {
    /// Normal(0, 1) slopes, normal(0, 10) intercept, exponential(1) σ, flat
    /// reference; step sizes are chosen automatically.
    pub fn new(seed: u64) -> Self {
        Self {
            coefficient_prior: DistributionSpec::Normal { mean: 0.0, sd: 1.0 },
            intercept_prior: DistributionSpec::Normal { mean: 0.0, sd: 10.0 },
            sigma_prior: DistributionSpec::Exponential { rate: 1.0 },
            mcmc: McmcConfig {
                initial_step_sizes: Vec::new(),
                ..McmcConfig::new(0, seed)
            },
            reference: ReferenceFunction::flat(),
            max_rhat: 1.05,
            min_ess_per_chain: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficient_prior.validate()?;
        self.intercept_prior.validate()?;
        self.sigma_prior.validate()?;
        self.reference.validate()?;
        if self.sigma_prior.ln_pdf(1.0)?.is_infinite() && self.sigma_prior.ln_pdf(0.5)?.is_infinite() {
            return Err(ModelError::InvalidSpec(format!(
                "σ prior {} gives no mass near 1",
                self.sigma_prior
            )));
        }
        Ok(())
    }
}

/// Log posterior over (β₀, …, β_p, log σ) with precomputed cross products.
#[derive(Debug, Clone)]
pub struct RegressionPosterior {
    n: f64,
    xtx: DMatrix<f64>,
    beta_hat: DVector<f64>,
    rss_hat: f64,
    spec: RegressionSpec,
}

impl RegressionPosterior {
    pub fn new(data: &RegressionData, spec: &RegressionSpec) -> Result<Self> {
        spec.validate()?;
        let xtx = data.x.transpose() * &data.x;
        let (beta_hat, rss_hat) = if data.n() == 0 {
            (DVector::zeros(data.x.ncols()), 0.0)
        } else {
            let xty = data.x.transpose() * &data.y;
            let beta_hat = xtx
                .clone()
                .cholesky()
                .ok_or(ModelError::RankDeficient {
                    rank: 0,
                    columns: data.x.ncols(),
                })?
                .solve(&xty);
            let resid = &data.y - &data.x * &beta_hat;
            (beta_hat, resid.norm_squared())
        };
        Ok(Self {
            n: data.n() as f64,
            xtx,
            beta_hat,
            rss_hat,
            spec: spec.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len() + 1
    }

    /// Least-squares estimate (zeros when there are no rows).
    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    /// Log density up to a constant. The residual sum of squares is written
    /// as RSS(β̂) + (β − β̂)ᵀXᵀX(β − β̂) to avoid cancellation.
    pub fn log_density(&self, params: &[f64]) -> f64 {
        let k = self.beta_hat.len();
        let log_sigma = params[k];
        let sigma = log_sigma.exp();
        let mut quad = 0.0;
        for i in 0..k {
            let di = params[i] - self.beta_hat[i];
            let row: f64 = (0..k).map(|j| self.xtx[(i, j)] * (params[j] - self.beta_hat[j])).sum();
            quad += di * row;
        }
        let ll = if self.n > 0.0 {
            -self.n * (log_sigma + LN_SQRT_2PI) - 0.5 * (self.rss_hat + quad) / (sigma * sigma)
        } else {
            0.0
        };
        let mut lp = ll + self.spec.intercept_prior.ln_pdf_unchecked(params[0]);
        for &b in &params[1..k] {
            lp += self.spec.coefficient_prior.ln_pdf_unchecked(b);
        }
        lp += self.spec.sigma_prior.ln_pdf_unchecked(sigma) + log_sigma;
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Mean and Cholesky factor of the Gaussian approximation used for
    /// whitening.
    fn gaussian_approximation(&self) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.beta_hat.len();
        let prior_moments = |spec: &DistributionSpec| {
            let var = spec.variance().filter(|v| v.is_finite()).unwrap_or(100.0);
            (spec.mean().filter(|m| m.is_finite()).unwrap_or(0.0), var)
        };
        let dof = self.n - k as f64;
        let sigma2 = if dof > 0.0 && self.rss_hat > 0.0 {
            self.rss_hat / dof
        } else {
            prior_moments(&self.spec.sigma_prior).0.max(1e-3).powi(2)
        };
        let mut precision = &self.xtx / sigma2;
        let mut shift = &self.xtx * &self.beta_hat / sigma2;
        for i in 0..k {
            let (m, v) = if i == 0 {
                prior_moments(&self.spec.intercept_prior)
            } else {
                prior_moments(&self.spec.coefficient_prior)
            };
            precision[(i, i)] += 1.0 / v;
            shift[i] += m / v;
        }
        let chol = precision
            .clone()
            .cholesky()
            .expect("posterior precision is positive definite");
        let mean_beta = chol.solve(&shift);
        let cov = chol.inverse();
        let l_beta = cov.cholesky().expect("covariance is positive definite").l();

        let mut mean = DVector::zeros(k + 1);
        mean.rows_mut(0, k).copy_from(&mean_beta);
        mean[k] = 0.5 * sigma2.ln();
        let mut l = DMatrix::zeros(k + 1, k + 1);
        l.view_mut((0, 0), (k, k)).copy_from(&l_beta);
        l[(k, k)] = if self.n > 0.0 { (0.5 / self.n).sqrt() } else { 1.0 };
        (mean, l)
    }
}

/// Log posterior at `[β₀, …, β_p, log σ]`.
pub fn regression_log_posterior(params: &[f64], data: &RegressionData, spec: &RegressionSpec) -> Result<f64> {
    let post = RegressionPosterior::new(data, spec)?;
    if params.len() != post.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: post.dim(),
            got: params.len(),
        });
    }
    Ok(post.log_density(params))
}

/// Draws over the coefficients and `sigma`, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub draws: ParameterDraws,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl RegressionFit {
    /// The fit's FBST for H₀: coefficient = 0.
    pub fn coefficient_fbst(
        &self,
        coefficient: &str,
        reference: &ReferenceFunction,
        dims: Dimensions,
    ) -> Result<EValueReport> {
        coefficient_fbst(&self.draws, coefficient, reference, dims)
    }
}

/// Samples the posterior. Fails with [`ModelError::ConvergenceFailure`]
/// (carrying the fit) if any R̂ exceeds `spec.max_rhat` or any ESS falls
/// below `spec.min_ess_per_chain` times the number of chains.
pub fn fit_regression(data: &RegressionData, spec: &RegressionSpec) -> Result<RegressionFit> {
    let post = RegressionPosterior::new(data, spec)?;
    let dim = post.dim();
    let mut config = spec.mcmc.clone();
    if config.chains < 2 {
        return Err(ModelError::InvalidSpec(
            "convergence checks need at least 2 chains".into(),
        ));
    }
    if config.initial_step_sizes.is_empty() {
        config.initial_step_sizes = vec![1.0; dim];
    }
    config.validate(dim)?;
    let (mean, l) = post.gaussian_approximation();
    let to_theta = |z: &[f64]| -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        (&mean + &l * zv).iter().copied().collect()
    };
    let target = |z: &[f64]| post.log_density(&to_theta(z));
    // overdispersed starts from streams the sampler itself never uses
    let inits: Vec<Vec<f64>> = (0..config.chains)
        .map(|c| {
            let mut r = rng::stream(config.seed, config.chains + c);
            (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()
        })
        .collect();
    let z_names: Vec<String> = (0..dim).map(|i| format!("z{i}")).collect();
    let z_draws = rw_metropolis_multi(&target, &z_names, &inits, &config)?;
    let draws = z_draws.map_rows(data.parameter_names(), |z| {
        let mut theta = to_theta(z);
        let last = theta.len() - 1;
        theta[last] = theta[last].exp();
        theta
    })?;
    let rhat = mcmc::gelman_rubin(&draws)?;
    let ess = mcmc::effective_sample_size(&draws);
    let fit = RegressionFit { draws, rhat, ess };

    let worst_rhat = fit.rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ess = fit.ess.iter().cloned().fold(f64::INFINITY, f64::min);
    let ess_floor = spec.min_ess_per_chain * config.chains as f64;
    let mut problems = Vec::new();
    if !(worst_rhat <= spec.max_rhat) {
        problems.push(format!("max R̂ {worst_rhat:.4} exceeds {}", spec.max_rhat));
    }
    if !(min_ess >= ess_floor) {
        problems.push(format!("min ESS {min_ess:.1} below {ess_floor}"));
    }
    if problems.is_empty() {
        Ok(fit)
    } else {
        let reason = problems.join("; ");
        log::warn!("regression fit failed convergence checks: {reason}");
        Err(ModelError::ConvergenceFailure {
            reason,
            fit: Box::new(fit),
        })
    }
}

/// FBST of H₀: coefficient = 0 from the coefficient's marginal draws.
pub fn coefficient_fbst(
    draws: &ParameterDraws,
    coefficient: &str,
    reference: &ReferenceFunction,
    dims: Dimensions,
) -> Result<EValueReport> {
    let j = draws
        .index_of(coefficient)
        .ok_or_else(|| ModelError::UnknownCoefficient(coefficient.to_string()))?;
    let partial = ev_against_from_samples(&draws.column(j), reference, &NullSpec::Point { theta0: 0.0 })?;
    Ok(EValueReport::assemble(partial, dims, None, None)?)
}

/// Outcome vectors simulated from the prior: β and σ from their priors,
/// then y ~ N(Xβ, σ²I).
pub fn prior_predictive(
    data: &RegressionData,
    spec: &RegressionSpec,
    n_sims: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if n_sims == 0 {
        return Err(ModelError::InvalidSpec("need at least one simulation".into()));
    }
    let mut r = rng::seeded(seed);
    let k = data.x.ncols();
    (0..n_sims)
        .map(|_| {
            let mut beta = DVector::zeros(k);
            beta[0] = spec.intercept_prior.sample_with(&mut r, 1)?[0];
            for j in 1..k {
                beta[j] = spec.coefficient_prior.sample_with(&mut r, 1)?[0];
            }
            let sigma = spec.sigma_prior.sample_with(&mut r, 1)?[0];
            let mean = &data.x * beta;
            Ok(mean
                .iter()
                .map(|m| m + sigma * r.sample::<f64, _>(StandardNormal))
                .collect())
        })
        .collect()
}
