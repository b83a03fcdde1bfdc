//! Probability distributions used by the models and the e-value machinery.
//!
//! Only the families the bundled models need are provided: priors and
//! reference functions (normal, Cauchy, Student-t, exponential, uniform),
//! χ²ₖ for the asymptotic significance values, and the noncentral t that
//! carries the marginal likelihood of the standardized effect size.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Cauchy, ChiSquared, Distribution, Exp, Normal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;
use crate::rng;
use crate::special::{gamma_p, gamma_q, ln_gamma, LN_SQRT_2PI};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("invalid parameter for {family}: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("cannot parse distribution `{0}`; expected e.g. `normal:0,1` or `cauchy:0,0.7071`")]
    Parse(String),
}

type Result<T> = std::result::Result<T, DistributionError>;

/// A fully parameterized member of one of the supported families.
///
/// `sd`, `scale` and `rate` are in the units of the variate; `Normal { sd }`
/// is a standard deviation, not a variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Normal { mean: f64, sd: f64 },
    Cauchy { location: f64, scale: f64 },
    StudentT { df: f64, location: f64, scale: f64 },
    NoncentralT { df: f64, ncp: f64 },
    ChiSquare { df: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

fn invalid(family: &'static str, reason: impl Into<String>) -> DistributionError {
    DistributionError::InvalidParameter {
        family,
        reason: reason.into(),
    }
}

fn check_positive(family: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(family, format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_finite(family: &'static str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(family, format!("{name} must be finite, got {v}")))
    }
}

impl DistributionSpec {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::Normal { mean, sd }.validated()
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        Self::Cauchy { location, scale }.validated()
    }

    pub fn student_t(df: f64) -> Result<Self> {
        Self::StudentT {
            df,
            location: 0.0,
            scale: 1.0,
        }
        .validated()
    }

    pub fn noncentral_t(df: f64, ncp: f64) -> Result<Self> {
        Self::NoncentralT { df, ncp }.validated()
    }

    pub fn chi_square(df: f64) -> Result<Self> {
        Self::ChiSquare { df }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::Exponential { rate }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::Uniform { lo, hi }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Normal { .. } => "normal",
            Self::Cauchy { .. } => "cauchy",
            Self::StudentT { .. } => "student_t",
            Self::NoncentralT { .. } => "noncentral_t",
            Self::ChiSquare { .. } => "chi_square",
            Self::Exponential { .. } => "exponential",
            Self::Uniform { .. } => "uniform",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let family = self.family();
        match *self {
            Self::Normal { mean, sd } => {
                check_finite(family, "mean", mean)?;
                check_positive(family, "sd", sd)
            }
            Self::Cauchy { location, scale } => {
                check_finite(family, "location", location)?;
                check_positive(family, "scale", scale)
            }
            Self::StudentT { df, location, scale } => {
                check_positive(family, "df", df)?;
                check_finite(family, "location", location)?;
                check_positive(family, "scale", scale)
            }
            Self::NoncentralT { df, ncp } => {
                check_positive(family, "df", df)?;
                check_finite(family, "ncp", ncp)
            }
            Self::ChiSquare { df } => check_positive(family, "df", df),
            Self::Exponential { rate } => check_positive(family, "rate", rate),
            Self::Uniform { lo, hi } => {
                check_finite(family, "lo", lo)?;
                check_finite(family, "hi", hi)?;
                if lo < hi {
                    Ok(())
                } else {
                    Err(invalid(
                        family,
                        format!("bounds must satisfy lo < hi, got [{lo}, {hi}]"),
                    ))
                }
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.ln_pdf_unchecked(x))
    }

    /// Density; 0 outside the support.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.ln_pdf(x).map(f64::exp)
    }

    /// Log density without parameter validation. Callers are expected to
    /// have validated the `DistributionSpec` once up front.
    pub(crate) fn ln_pdf_unchecked(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - LN_SQRT_2PI - sd.ln()
            }
            Self::Cauchy { location, scale } => {
                let z = (x - location) / scale;
                -(PI * scale).ln() - (z * z).ln_1p()
            }
            Self::StudentT { df, location, scale } => {
                let z = (x - location) / scale;
                ln_student_t_pdf(z, df) - scale.ln()
            }
            Self::NoncentralT { df, ncp } => ln_noncentral_t_pdf(x, df, ncp),
            Self::ChiSquare { df } => ln_chi2_pdf(x, df),
            Self::Exponential { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            Self::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Theoretical mean, where it exists.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            Self::Normal { mean, .. } => Some(mean),
            Self::Cauchy { .. } => None,
            Self::StudentT { df, location, .. } => (df > 1.0).then_some(location),
            Self::NoncentralT { df, ncp } => {
                (df > 1.0).then(|| ncp * (df / 2.0).sqrt() * (ln_gamma((df - 1.0) / 2.0) - ln_gamma(df / 2.0)).exp())
            }
            Self::ChiSquare { df } => Some(df),
            Self::Exponential { rate } => Some(1.0 / rate),
            Self::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
        }
    }

    /// Theoretical variance, where it exists.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            Self::Normal { sd, .. } => Some(sd * sd),
            Self::Cauchy { .. } => None,
            Self::StudentT { df, scale, .. } => (df > 2.0).then(|| scale * scale * df / (df - 2.0)),
            Self::NoncentralT { df, ncp } => {
                let m = self.mean()?;
                (df > 2.0).then(|| df * (1.0 + ncp * ncp) / (df - 2.0) - m * m)
            }
            Self::ChiSquare { df } => Some(2.0 * df),
            Self::Exponential { rate } => Some(1.0 / (rate * rate)),
            Self::Uniform { lo, hi } => Some((hi - lo).powi(2) / 12.0),
        }
    }

    /// `n` draws from the stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(DistributionError::Domain("sample size must be at least 1".into()));
        }
        let mut rng = rng::seeded(seed);
        self.sample_with(&mut rng, n)
    }

    /// `n` draws from a caller-owned generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let draws = match *self {
            Self::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| invalid("normal", e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Self::Cauchy { location, scale } => {
                let d = Cauchy::new(location, scale).map_err(|e| invalid("cauchy", e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Self::StudentT { df, location, scale } => {
                let d = StudentT::new(df).map_err(|e| invalid("student_t", e.to_string()))?;
                (0..n).map(|_| location + scale * d.sample(rng)).collect()
            }
            Self::NoncentralT { df, ncp } => {
                let z = Normal::new(ncp, 1.0).map_err(|e| invalid("noncentral_t", e.to_string()))?;
                let v = ChiSquared::new(df).map_err(|e| invalid("noncentral_t", e.to_string()))?;
                (0..n).map(|_| z.sample(rng) / (v.sample(rng) / df).sqrt()).collect()
            }
            Self::ChiSquare { df } => {
                let d = ChiSquared::new(df).map_err(|e| invalid("chi_square", e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Self::Exponential { rate } => {
                let d = Exp::new(rate).map_err(|e| invalid("exponential", e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Self::Uniform { lo, hi } => (0..n)
                .map(|_| (lo + (hi - lo) * rng.random::<f64>()).clamp(lo, hi))
                .collect(),
        };
        Ok(draws)
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Normal { mean, sd } => write!(f, "normal:{mean},{sd}"),
            Self::Cauchy { location, scale } => write!(f, "cauchy:{location},{scale}"),
            Self::StudentT { df, location, scale } => write!(f, "student_t:{df},{location},{scale}"),
            Self::NoncentralT { df, ncp } => write!(f, "noncentral_t:{df},{ncp}"),
            Self::ChiSquare { df } => write!(f, "chi_square:{df}"),
            Self::Exponential { rate } => write!(f, "exponential:{rate}"),
            Self::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

/// Parses `family:p1,p2,...`, e.g. `normal:0,10`, `exponential:1`.
impl FromStr for DistributionSpec {
    type Err = DistributionError;

    fn from_str(s: &str) -> Result<Self> {
        let parse_err = || DistributionError::Parse(s.to_string());
        let (family, params) = s.split_once(':').ok_or_else(parse_err)?;
        let params: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err())?;
        match (family.trim().to_ascii_lowercase().as_str(), params.as_slice()) {
            ("normal", &[mean, sd]) => Self::normal(mean, sd),
            ("cauchy", &[location, scale]) => Self::cauchy(location, scale),
            ("student_t" | "t", &[df]) => Self::student_t(df),
            ("student_t" | "t", &[df, location, scale]) => Self::StudentT { df, location, scale }.validated(),
            ("noncentral_t", &[df, ncp]) => Self::noncentral_t(df, ncp),
            ("chi_square" | "chisq", &[df]) => Self::chi_square(df),
            ("exponential" | "exp", &[rate]) => Self::exponential(rate),
            ("uniform", &[lo, hi]) => Self::uniform(lo, hi),
            _ => Err(parse_err()),
        }
    }
}

fn ln_student_t_pdf(z: f64, df: f64) -> f64 {
    ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * PI).ln() - (df + 1.0) / 2.0 * (z * z / df).ln_1p()
}

fn ln_chi2_pdf(x: f64, k: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return match k.partial_cmp(&2.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 0.5f64.ln(),
            _ => f64::NEG_INFINITY,
        };
    }
    (k / 2.0 - 1.0) * x.ln() - x / 2.0 - (k / 2.0) * std::f64::consts::LN_2 - ln_gamma(k / 2.0)
}

/// χ²ₖ cdf, the regularized lower incomplete gamma P(k/2, x/2).
pub fn chi2_cdf(x: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(DistributionError::Domain(format!(
            "degrees of freedom k = {k} must be positive"
        )));
    }
    if !(x >= 0.0) {
        return Err(DistributionError::Domain(format!(
            "chi-square argument x = {x} must be nonnegative"
        )));
    }
    gamma_p(k / 2.0, x / 2.0).map_err(|e| DistributionError::Domain(e.to_string()))
}

/// Upper tail 1 − χ²ₖ cdf, computed without cancellation.
pub fn chi2_sf(x: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(DistributionError::Domain(format!(
            "degrees of freedom k = {k} must be positive"
        )));
    }
    if !(x >= 0.0) {
        return Err(DistributionError::Domain(format!(
            "chi-square argument x = {x} must be nonnegative"
        )));
    }
    gamma_q(k / 2.0, x / 2.0).map_err(|e| DistributionError::Domain(e.to_string()))
}

/// Generalized inverse of the χ²ₖ cdf on `[0, 1)`.
///
/// A doubling bracket is bisected down to a relative width of 1e-13 and then
/// polished with Newton steps that are only accepted if they stay inside
/// the bracket.
pub fn chi2_quantile(p: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(DistributionError::Domain(format!(
            "degrees of freedom k = {k} must be positive"
        )));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(DistributionError::Domain(format!(
            "probability p = {p} must lie in [0, 1)"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let cdf = |x: f64| gamma_p(k / 2.0, x / 2.0).unwrap_or(f64::NAN);
    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(DistributionError::Domain(format!("quantile for p = {p} overflows")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let density = ln_chi2_pdf(x, k).exp();
        if !(density > 0.0) || !density.is_finite() {
            break;
        }
        let next = x - (cdf(x) - p) / density;
        if !(next > lo && next < hi) {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Density of the noncentral t distribution with `df` degrees of freedom and
/// noncentrality `ncp`.
pub fn noncentral_t_pdf(t: f64, df: f64, ncp: f64) -> Result<f64> {
    noncentral_t_ln_pdf(t, df, ncp).map(f64::exp)
}

/// Log density of the noncentral t, finite even where the density underflows.
pub fn noncentral_t_ln_pdf(t: f64, df: f64, ncp: f64) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(DistributionError::Domain(format!(
            "degrees of freedom {df} must be positive"
        )));
    }
    if !t.is_finite() || !ncp.is_finite() {
        return Err(DistributionError::Domain(format!(
            "t = {t} and ncp = {ncp} must be finite"
        )));
    }
    Ok(ln_noncentral_t_pdf(t, df, ncp))
}

/// With T = (Z + ncp)/S and S = √(V/ν), V ~ χ²_ν, the density is
///
///   f(t) = c_ν ∫₀^∞ exp(ν ln s − ν s²/2 − (t s − ncp)²/2) ds,
///   c_ν  = 2ν · ν^{ν/2−1} / (√(2π) · 2^{ν/2} · Γ(ν/2)).
///
/// The exponent g(s) is strictly concave with a closed-form maximizer, so the
/// integrand is rescaled by exp(g(s*)) and integrated over the region where it
/// exceeds e⁻⁶⁰.
fn ln_noncentral_t_pdf(t: f64, df: f64, ncp: f64) -> f64 {
    let nu = df;
    let exponent = |s: f64| nu * s.ln() - 0.5 * nu * s * s - 0.5 * (t * s - ncp).powi(2);
    let curvature_base = nu + t * t;
    let s_star = (t * ncp + (t * t * ncp * ncp + 4.0 * nu * curvature_base).sqrt()) / (2.0 * curvature_base);
    let g_star = exponent(s_star);
    let width = 1.0 / (nu / (s_star * s_star) + curvature_base).sqrt();
    const CUTOFF: f64 = -60.0;

    let mut upper_dist = 8.0 * width;
    while exponent(s_star + upper_dist) - g_star > CUTOFF {
        upper_dist *= 2.0;
    }
    let mut lower_dist = 8.0 * width;
    while s_star - lower_dist > 0.0 && exponent(s_star - lower_dist) - g_star > CUTOFF {
        lower_dist *= 2.0;
    }
    let lo = (s_star - lower_dist).max(0.0);
    let hi = s_star + upper_dist;

    let integrand = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (exponent(s) - g_star).exp()
        }
    };
    let (left, _) = quadrature::integrate(integrand, lo, s_star, 1e-10 * width, 1e-13);
    let (right, _) = quadrature::integrate(integrand, s_star, hi, 1e-10 * width, 1e-13);

    let ln_const = (2.0 * nu).ln() + (nu / 2.0 - 1.0) * nu.ln()
        - LN_SQRT_2PI
        - (nu / 2.0) * std::f64::consts::LN_2
        - ln_gamma(nu / 2.0);
    ln_const + g_star + (left + right).ln()
}
