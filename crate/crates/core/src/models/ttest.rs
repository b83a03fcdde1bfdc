//! Bayesian two-sample t-test on the standardized effect size
//! δ = (μ₁ − μ₂)/σ with a Cauchy(0, r) prior.
//!
//! Under the prior p(μ, σ²) ∝ 1/σ² the nuisance parameters integrate out
//! and the likelihood of δ is the noncentral-t density of the pooled t
//! statistic, t ~ t_ν(δ·√n_δ) with ν = n₁ + n₂ − 2 and n_δ = n₁n₂/(n₁+n₂).
//! That one-dimensional posterior is tabulated on a grid. The joint
//! posterior over (μ, log σ, δ) is also available for sampling, as an
//! independent route to the same δ marginal.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::density::{self, normalize_grid, GriddedDensity, DEFAULT_GRID_POINTS};
use crate::distributions::{noncentral_t_ln_pdf, DistributionSpec};
use crate::evalue::ReferenceFunction;
use crate::mcmc::{rw_metropolis, McmcConfig, ParameterDraws};
use crate::rng::FbstRng;
use crate::special::LN_SQRT_2PI;

/// Tolerated posterior mass beyond the grid edges.
const EDGE_MASS_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestSpec {
    /// Scale r of the Cauchy(0, r) prior on δ.
    pub prior_scale: f64,
    /// Reference function for the surprise; `None` uses the δ prior.
    pub reference: Option<ReferenceFunction>,
    pub grid_range: (f64, f64),
    pub grid_points: usize,
}

impl Default for TTestSpec {
    fn default() -> Self {
        Self {
            prior_scale: std::f64::consts::FRAC_1_SQRT_2,
            reference: None,
            grid_range: (-6.0, 6.0),
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl TTestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return Err(ModelError::InvalidSpec(format!(
                "prior scale {} must be positive",
                self.prior_scale
            )));
        }
        let (lo, hi) = self.grid_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidSpec(format!("grid range [{lo}, {hi}] is empty")));
        }
        if self.grid_points < density::MIN_GRID_POINTS {
            return Err(ModelError::InvalidSpec(format!(
                "grid needs at least {} points, got {}",
                density::MIN_GRID_POINTS,
                self.grid_points
            )));
        }
        if let Some(r) = &self.reference {
            r.validate()?;
        }
        Ok(())
    }

    /// The Cauchy(0, r) prior on δ.
    pub fn prior(&self) -> DistributionSpec {
        DistributionSpec::Cauchy {
            location: 0.0,
            scale: self.prior_scale,
        }
    }

    pub fn reference_function(&self) -> ReferenceFunction {
        self.reference.clone().unwrap_or(ReferenceFunction::Distribution {
            spec: self.prior(),
            scale: 1.0,
        })
    }
}

/// Outcomes of two independent groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupData {
    pub group1: Vec<f64>,
    pub group2: Vec<f64>,
    pub labels: [String; 2],
}

/// Sufficient statistics and the pooled two-sample t statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupSummary {
    pub n1: usize,
    pub n2: usize,
    pub mean1: f64,
    pub mean2: f64,
    pub sd1: f64,
    pub sd2: f64,
    pub pooled_sd: f64,
    /// (mean1 − mean2) / (pooled_sd · √(1/n1 + 1/n2))
    pub t_obs: f64,
    pub df: f64,
    pub n_delta: f64,
    /// (mean1 − mean2) / pooled_sd
    pub cohen_d: f64,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

impl TwoGroupData {
    pub fn new(group1: Vec<f64>, group2: Vec<f64>) -> Result<Self> {
        Self::with_labels(group1, group2, ["group1".into(), "group2".into()])
    }

    pub fn with_labels(group1: Vec<f64>, group2: Vec<f64>, labels: [String; 2]) -> Result<Self> {
        for (g, label) in [(&group1, &labels[0]), (&group2, &labels[1])] {
            if g.len() < 2 {
                return Err(ModelError::InvalidData(format!(
                    "group {label:?} has {} observations; at least 2 are needed",
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidData(format!(
                    "group {label:?} contains a non-finite value"
                )));
            }
            if !(mean_sd(g).1 > 0.0) {
                return Err(ModelError::InvalidData(format!(
                    "group {label:?} has zero standard deviation"
                )));
            }
        }
        Ok(Self { group1, group2, labels })
    }

    pub fn summary(&self) -> TwoGroupSummary {
        let (n1, n2) = (self.group1.len(), self.group2.len());
        let (mean1, sd1) = mean_sd(&self.group1);
        let (mean2, sd2) = mean_sd(&self.group2);
        let (f1, f2) = (n1 as f64, n2 as f64);
        let df = f1 + f2 - 2.0;
        let pooled_sd = (((f1 - 1.0) * sd1 * sd1 + (f2 - 1.0) * sd2 * sd2) / df).sqrt();
        let diff = mean1 - mean2;
        TwoGroupSummary {
            n1,
            n2,
            mean1,
            mean2,
            sd1,
            sd2,
            pooled_sd,
            t_obs: diff / (pooled_sd * (1.0 / f1 + 1.0 / f2).sqrt()),
            df,
            n_delta: f1 * f2 / (f1 + f2),
            cohen_d: diff / pooled_sd,
        }
    }
}

/// Grid posterior of δ for the data.
pub fn ttest_posterior_grid(data: &TwoGroupData, spec: &TTestSpec) -> Result<GriddedDensity> {
    let s = data.summary();
    ttest_posterior_grid_from_t(s.t_obs, s.n1, s.n2, spec)
}

/// Grid posterior of δ from the t statistic and group sizes alone.
///
/// Fails when the estimated posterior mass beyond the grid edges exceeds
/// 1e-4; the tail beyond each edge is extrapolated from the log-density
/// slope of the two outermost nodes.
pub fn ttest_posterior_grid_from_t(t_obs: f64, n1: usize, n2: usize, spec: &TTestSpec) -> Result<GriddedDensity> {
    spec.validate()?;
    if n1 < 2 || n2 < 2 {
        return Err(ModelError::InvalidData(format!(
            "group sizes {n1}, {n2}: each needs at least 2"
        )));
    }
    if !t_obs.is_finite() {
        return Err(ModelError::InvalidData(format!("t statistic {t_obs} is not finite")));
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let df = f1 + f2 - 2.0;
    let root_n = (f1 * f2 / (f1 + f2)).sqrt();
    let prior = spec.prior();
    let (lo, hi) = spec.grid_range;
    let grid = density::linspace(lo, hi, spec.grid_points);
    let log_values: Vec<f64> = grid
        .iter()
        .map(|&d| Ok(prior.ln_pdf_unchecked(d) + noncentral_t_ln_pdf(t_obs, df, d * root_n)?))
        .collect::<Result<_>>()?;
    let peak = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_values.iter().map(|l| (l - peak).exp()).collect();
    let gd = normalize_grid(&grid, &raw)?;

    let n = grid.len();
    let step = grid[1] - grid[0];
    let width = hi - lo;
    let tail = |edge: f64, inner: f64, value: f64| {
        // log-density decay rate per unit δ moving outward
        let rate = (inner - edge) / step;
        if rate > 0.0 {
            value / rate
        } else {
            value * width
        }
    };
    let z = gd.normalization_constant();
    let mass = (tail(log_values[0], log_values[1], (log_values[0] - peak).exp())
        + tail(log_values[n - 1], log_values[n - 2], (log_values[n - 1] - peak).exp()))
        / z;
    if mass > EDGE_MASS_LIMIT {
        return Err(ModelError::GridTooNarrow { mass });
    }
    Ok(gd)
}

/// λ = log relative likelihood of δ = θ₀ against the maximum-likelihood δ,
/// using the noncentral-t likelihood of the t statistic.
pub fn ttest_log_relative_likelihood(t_obs: f64, n1: usize, n2: usize, theta0: f64) -> Result<f64> {
    if n1 < 2 || n2 < 2 || !t_obs.is_finite() || !theta0.is_finite() {
        return Err(ModelError::InvalidData(format!(
            "t = {t_obs}, n = ({n1}, {n2}), θ₀ = {theta0}"
        )));
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let df = f1 + f2 - 2.0;
    let root_n = (f1 * f2 / (f1 + f2)).sqrt();
    let ll = |ncp: f64| noncentral_t_ln_pdf(t_obs, df, ncp).unwrap_or(f64::NEG_INFINITY);
    // unimodal in the noncentrality; bracket generously around t
    let half_width = 2.0 * t_obs.abs() + 10.0;
    let scan = density::linspace(t_obs - half_width, t_obs + half_width, 401);
    let (i, _) =
        scan.iter().map(|&c| ll(c)).enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let (mut a, mut b) = (scan[i.saturating_sub(1)], scan[(i + 1).min(scan.len() - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-10 * (1.0 + a.abs()) {
        let c = b - inv_phi * (b - a);
        let d = a + inv_phi * (b - a);
        if ll(c) >= ll(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let best = ll(0.5 * (a + b)).max(ll(scan[i]));
    Ok((ll(theta0 * root_n) - best).min(0.0))
}

/// Joint posterior over (μ, log σ, δ) with group means μ ± σδ/2.
///
/// Built from sufficient statistics so each evaluation is O(1).
#[derive(Debug, Clone)]
pub struct JointTTestPosterior {
    n1: f64,
    n2: f64,
    mean1: f64,
    mean2: f64,
    ss1: f64,
    ss2: f64,
    prior: DistributionSpec,
}

impl JointTTestPosterior {
    pub fn new(data: &TwoGroupData, spec: &TTestSpec) -> Result<Self> {
        spec.validate()?;
        let s = data.summary();
        Ok(Self {
            n1: s.n1 as f64,
            n2: s.n2 as f64,
            mean1: s.mean1,
            mean2: s.mean2,
            ss1: (s.n1 as f64 - 1.0) * s.sd1 * s.sd1,
            ss2: (s.n2 as f64 - 1.0) * s.sd2 * s.sd2,
            prior: spec.prior(),
        })
    }

    /// Log density (up to a constant) at `[μ, log σ, δ]`. The 1/σ² prior on
    /// (μ, σ²) is flat in (μ, log σ) once the Jacobian is included.
    pub fn log_density(&self, params: &[f64]) -> f64 {
        let (mu, log_sigma, delta) = (params[0], params[1], params[2]);
        let sigma = log_sigma.exp();
        let m1 = mu + 0.5 * sigma * delta;
        let m2 = mu - 0.5 * sigma * delta;
        let sse = self.ss1 + self.n1 * (self.mean1 - m1).powi(2) + self.ss2 + self.n2 * (self.mean2 - m2).powi(2);
        let n = self.n1 + self.n2;
        let ll = -n * (log_sigma + LN_SQRT_2PI) - 0.5 * sse / (sigma * sigma);
        let lp = ll + self.prior.ln_pdf_unchecked(delta);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }
}

/// Joint log posterior at `[μ, log σ, δ]`.
pub fn ttest_joint_log_posterior(params: &[f64], data: &TwoGroupData, spec: &TTestSpec) -> Result<f64> {
    if params.len() != 3 {
        return Err(ModelError::DimensionMismatch {
            expected: 3,
            got: params.len(),
        });
    }
    Ok(JointTTestPosterior::new(data, spec)?.log_density(params))
}

/// Samples the joint posterior; draws are reported as `mu`, `sigma`, `delta`.
///
/// Empty `initial_step_sizes` in the config are replaced by the approximate
/// posterior standard deviations of (μ, log σ, δ).
pub fn ttest_mcmc(data: &TwoGroupData, spec: &TTestSpec, config: &McmcConfig) -> Result<ParameterDraws> {
    let target = JointTTestPosterior::new(data, spec)?;
    let s = data.summary();
    let n = (s.n1 + s.n2) as f64;
    let mut config = config.clone();
    if config.initial_step_sizes.is_empty() {
        config.initial_step_sizes = vec![s.pooled_sd / n.sqrt(), (0.5 / n).sqrt(), (1.0 / s.n_delta).sqrt()];
    }
    let init = [0.5 * (s.mean1 + s.mean2), s.pooled_sd.ln(), s.cohen_d];
    let names: Vec<String> = ["mu", "log_sigma", "delta"].iter().map(|s| s.to_string()).collect();
    let draws = rw_metropolis(&|p: &[f64]| target.log_density(p), &names, &init, &config)?;
    let out_names = ["mu", "sigma", "delta"].iter().map(|s| s.to_string()).collect();
    Ok(draws.map_rows(out_names, |r| vec![r[0], r[1].exp(), r[2]])?)
}

/// Rao–Blackwellized δ marginal from joint draws of (μ, σ, δ): the average
/// over draws of the conditional density p(δ | μ, σ, data), each conditional
/// normalized on the `TTestSpec` grid.
///
/// Given μ and σ the likelihood of δ is Gaussian with precision n/4, so the
/// estimate is far smoother than a kernel estimate from the δ draws alone.
pub fn ttest_marginal_from_draws(
    data: &TwoGroupData,
    spec: &TTestSpec,
    draws: &ParameterDraws,
) -> Result<GriddedDensity> {
    spec.validate()?;
    let column = |name: &str| {
        draws
            .column_by_name(name)
            .ok_or_else(|| ModelError::InvalidData(format!("draws have no {name:?} column")))
    };
    let (mu, sigma) = (column("mu")?, column("sigma")?);
    let s = data.summary();
    let (f1, f2) = (s.n1 as f64, s.n2 as f64);
    let n = f1 + f2;
    let precision = n / 4.0;
    let half_width = 10.0 / precision.sqrt();
    let prior = spec.prior();
    let (lo, hi) = spec.grid_range;
    let grid = density::linspace(lo, hi, spec.grid_points);
    let step = grid[1] - grid[0];
    let prior_values: Vec<f64> = grid.iter().map(|&d| prior.ln_pdf_unchecked(d).exp()).collect();
    let mut acc = vec![0.0; grid.len()];
    let mut w = Vec::new();
    for (&m_, &sd) in mu.iter().zip(&sigma) {
        if !(sd > 0.0 && sd.is_finite() && m_.is_finite()) {
            return Err(ModelError::InvalidData(format!("draw with mu = {m_}, sigma = {sd}")));
        }
        let (u1, u2) = ((s.mean1 - m_) / sd, (s.mean2 - m_) / sd);
        let centre = 2.0 * (f1 * u1 - f2 * u2) / n;
        let a = (((centre - half_width - lo) / step).floor().max(0.0) as usize).min(grid.len() - 1);
        let b = (((centre + half_width - lo) / step).ceil().max(0.0) as usize).min(grid.len() - 1);
        if a >= b {
            return Err(ModelError::GridTooNarrow { mass: 1.0 });
        }
        w.clear();
        w.extend((a..=b).map(|j| (-0.5 * precision * (grid[j] - centre).powi(2)).exp() * prior_values[j]));
        let z = step * (w.iter().sum::<f64>() - 0.5 * (w[0] + w[w.len() - 1]));
        if !(z > 0.0) {
            return Err(ModelError::GridTooNarrow { mass: 1.0 });
        }
        for (slot, v) in acc[a..=b].iter_mut().zip(&w) {
            *slot += v / z;
        }
    }
    Ok(normalize_grid(&grid, &acc)?)
}

/// Two normal samples drawn from one seeded stream (group 1 first), and the
/// generating effect size (μ₁ − μ₂)/√((σ₁² + σ₂²)/2).
pub fn simulate_two_groups(
    n1: usize,
    mu1: f64,
    sd1: f64,
    n2: usize,
    mu2: f64,
    sd2: f64,
    seed: u64,
) -> Result<(TwoGroupData, f64)> {
    if n1 < 2 || n2 < 2 {
        return Err(ModelError::InvalidData(format!(
            "group sizes {n1}, {n2}: each needs at least 2"
        )));
    }
    let mut rng = FbstRng::seed_from_u64(seed);
    let g1 = DistributionSpec::normal(mu1, sd1)?.sample_with(&mut rng, n1)?;
    let g2 = DistributionSpec::normal(mu2, sd2)?.sample_with(&mut rng, n2)?;
    let true_effect = (mu1 - mu2) / ((sd1 * sd1 + sd2 * sd2) / 2.0).sqrt();
    Ok((TwoGroupData::new(g1, g2)?, true_effect))
}
