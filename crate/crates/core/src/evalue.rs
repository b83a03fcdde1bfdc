//! Surprise functions, the tangential set and the e-value family.
//!
//! For a posterior density p(θ|x) and a reference function r(θ) the surprise
//! is s(θ) = p(θ|x)/r(θ). With s* the supremum of s over the null set, the
//! tangential set is {θ : s(θ) > s*} and its posterior mass is ev̄, the
//! evidence against the null; ev = 1 − ev̄. Points tied with s* are not in
//! the tangential set.
//!
//! The tangential-set membership test only compares surprises with each
//! other, so every comparison is done with the unscaled reference density.
//! A positive scale on the reference changes the reported s* but not ev̄,
//! bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{self, DensityError, GriddedDensity, KdeModel};
use crate::distributions::{chi2_cdf, chi2_quantile, chi2_sf, DistributionError, DistributionSpec};

/// Below this many draws the sample path refuses to run.
pub const MIN_DRAWS: usize = 1000;
/// Below this many draws the sample path warns.
pub const RECOMMENDED_DRAWS: usize = 10_000;

const SCAN_POINTS: usize = 512;
const GOLDEN_TOL: f64 = 1e-8;
const LAMBDA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EValueError {
    #[error("reference density is zero at θ = {theta} where the posterior is positive")]
    ZeroReference { theta: f64 },
    #[error("invalid null set: {0}")]
    InvalidNull(String),
    #[error("invalid dimensions k = {k}, h = {h}: need k > h ≥ 0 and k ≥ 1")]
    InvalidDimensions { k: usize, h: usize },
    #[error("{0}")]
    Domain(String),
    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid reference function: {0}")]
    InvalidReference(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

type Result<T> = std::result::Result<T, EValueError>;

fn one() -> f64 {
    1.0
}

/// The denominator r(θ) of the surprise function, optionally multiplied by a
/// positive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceFunction {
    Flat {
        #[serde(default = "one")]
        scale: f64,
    },
    Distribution {
        spec: DistributionSpec,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl ReferenceFunction {
    pub fn flat() -> Self {
        Self::Flat { scale: 1.0 }
    }

    pub fn distribution(spec: DistributionSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::Distribution { spec, scale: 1.0 })
    }

    /// The same reference multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(EValueError::InvalidReference(format!(
                "scale {c} must be positive and finite"
            )));
        }
        Ok(match self {
            Self::Flat { scale } => Self::Flat { scale: scale * c },
            Self::Distribution { spec, scale } => Self::Distribution {
                spec: *spec,
                scale: scale * c,
            },
        })
    }

    pub fn scale(&self) -> f64 {
        match self {
            Self::Flat { scale } | Self::Distribution { scale, .. } => *scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.scale();
        if !(s > 0.0 && s.is_finite()) {
            return Err(EValueError::InvalidReference(format!(
                "scale {s} must be positive and finite"
            )));
        }
        if let Self::Distribution { spec, .. } = self {
            spec.validate()?;
        }
        Ok(())
    }

    /// r(θ) without the scale factor.
    fn unscaled(&self, theta: f64) -> f64 {
        match self {
            Self::Flat { .. } => 1.0,
            Self::Distribution { spec, .. } => spec.ln_pdf_unchecked(theta).exp(),
        }
    }

    /// r(θ), scale included.
    pub fn value(&self, theta: f64) -> f64 {
        self.scale() * self.unscaled(theta)
    }

    /// Surprise with the unscaled reference; the ordering every e-value uses.
    fn canonical_surprise(&self, posterior: f64, theta: f64) -> Result<f64> {
        let r = self.unscaled(theta);
        if r > 0.0 {
            Ok(posterior / r)
        } else if posterior > 0.0 {
            Err(EValueError::ZeroReference { theta })
        } else {
            Ok(0.0)
        }
    }

    /// Surprise at each node of a tabulated density, scale included.
    pub fn surprise_values(&self, grid: &[f64], density: &[f64]) -> Result<Vec<f64>> {
        let scale = self.scale();
        grid.iter()
            .zip(density)
            .map(|(&t, &p)| self.canonical_surprise(p, t).map(|s| s / scale))
            .collect()
    }
}

impl fmt::Display for ReferenceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Flat { .. } => write!(f, "flat")?,
            Self::Distribution { spec, .. } => write!(f, "{spec}")?,
        }
        if self.scale() != 1.0 {
            write!(f, "*{}", self.scale())?;
        }
        Ok(())
    }
}

impl FromStr for ReferenceFunction {
    type Err = EValueError;

    /// `flat` or a distribution such as `cauchy:0,0.7071`, optionally
    /// followed by `*scale`.
    fn from_str(s: &str) -> Result<Self> {
        let (base, scale) = match s.split_once('*') {
            Some((b, c)) => {
                let c: f64 = c
                    .trim()
                    .parse()
                    .map_err(|_| EValueError::InvalidReference(format!("bad scale in {s:?}")))?;
                (b.trim(), c)
            }
            None => (s.trim(), 1.0),
        };
        let r = if base.eq_ignore_ascii_case("flat") {
            Self::flat()
        } else {
            Self::distribution(base.parse()?)?
        };
        if scale == 1.0 {
            Ok(r)
        } else {
            r.scaled(scale)
        }
    }
}

/// The null set: a single point or a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullSpec {
    Point { theta0: f64 },
    Interval { lo: f64, hi: f64 },
}

impl NullSpec {
    pub fn point(theta0: f64) -> Result<Self> {
        let n = Self::Point { theta0 };
        n.validate()?;
        Ok(n)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let n = Self::Interval { lo, hi };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Point { theta0 } if !theta0.is_finite() => {
                Err(EValueError::InvalidNull(format!("point {theta0} is not finite")))
            }
            Self::Interval { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => Err(
                EValueError::InvalidNull(format!("interval [{lo}, {hi}] is empty or not finite")),
            ),
            _ => Ok(()),
        }
    }
}

/// Dimensions of the parameter space (k) and of the null set (h).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub k: usize,
    pub h: usize,
}

impl Dimensions {
    pub fn new(k: usize, h: usize) -> Result<Self> {
        let d = Self { k, h };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.h >= self.k {
            return Err(EValueError::InvalidDimensions { k: self.k, h: self.h });
        }
        Ok(())
    }
}

impl FromStr for Dimensions {
    type Err = EValueError;

    /// `k,h`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || EValueError::Domain(format!("dimensions must be written k,h; got {s:?}"));
        let (k, h) = s.split_once(',').ok_or_else(bad)?;
        let k = k.trim().parse().map_err(|_| bad())?;
        let h = h.trim().parse().map_err(|_| bad())?;
        Self::new(k, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    Samples,
}

/// Tangential-set result before the χ²-based quantities are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEValue {
    pub ev_against: f64,
    pub s_star: f64,
    /// Location of the maximum of the surprise function.
    pub surprise_mode: f64,
    /// Location inside the null set where s* is attained.
    pub null_mode: f64,
    pub method: Method,
    pub reference: ReferenceFunction,
    pub null: NullSpec,
    pub estimator_sd: Option<f64>,
    pub warnings: Vec<String>,
}

/// One full FBST result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EValueReport {
    pub ev_against: f64,
    pub ev_support: f64,
    pub sev_against: f64,
    pub sev_support: f64,
    pub ev0: f64,
    pub pv0: Option<f64>,
    pub s_star: f64,
    pub d0: f64,
    pub surprise_mode: f64,
    pub null_mode: f64,
    pub dims: Dimensions,
    pub method: Method,
    pub reference: ReferenceFunction,
    pub null: NullSpec,
    pub estimator_sd: Option<f64>,
    pub warnings: Vec<String>,
}

impl EValueReport {
    /// Completes a partial result. `d0` defaults to the squared distance
    /// between the surprise maximum and the null maximizer; `lambda` is the
    /// log relative likelihood at the null, when known.
    pub fn assemble(partial: PartialEValue, dims: Dimensions, d0: Option<f64>, lambda: Option<f64>) -> Result<Self> {
        dims.validate()?;
        let d0 = match d0 {
            Some(d) => d,
            None => mode_distance(&[partial.surprise_mode], &[partial.null_mode])?,
        };
        let (sev_against, sev_support) = standardized_ev(partial.ev_against, dims)?;
        let ev0 = asymptotic_ev0(d0, dims)?;
        let pv0 = lambda.map(|l| asymptotic_pv0(l, dims)).transpose()?;
        Ok(Self {
            ev_against: partial.ev_against,
            ev_support: 1.0 - partial.ev_against,
            sev_against,
            sev_support,
            ev0,
            pv0,
            s_star: partial.s_star,
            d0,
            surprise_mode: partial.surprise_mode,
            null_mode: partial.null_mode,
            dims,
            method: partial.method,
            reference: partial.reference,
            null: partial.null,
            estimator_sd: partial.estimator_sd,
            warnings: partial.warnings,
        })
    }
}

/// s(θ) = p(θ|x)/r(θ) for a single point.
pub fn surprise(posterior_at: impl Fn(f64) -> f64, reference: &ReferenceFunction, theta: f64) -> Result<f64> {
    reference.validate()?;
    reference
        .canonical_surprise(posterior_at(theta), theta)
        .map(|s| s / reference.scale())
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Maximizer and maximum of `f` over the null set.
fn argsup_null(f: &impl Fn(f64) -> f64, null: &NullSpec) -> (f64, f64) {
    match *null {
        NullSpec::Point { theta0 } => (theta0, f(theta0)),
        NullSpec::Interval { lo, hi } => {
            if lo == hi {
                return (lo, f(lo));
            }
            let xs = density::linspace(lo, hi, SCAN_POINTS);
            let (i, best) =
                xs.iter().map(|&x| f(x)).enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                );
            let a = xs[i.saturating_sub(1)];
            let b = xs[(i + 1).min(SCAN_POINTS - 1)];
            let (x, v) = golden_max(f, a, b);
            if v >= best {
                (x, v)
            } else {
                (xs[i], best)
            }
        }
    }
}

/// Supremum of a surprise function over the null set: a single evaluation
/// for a point null, a 512-point scan refined by golden-section search for
/// an interval.
pub fn sup_null(surprise_at: impl Fn(f64) -> f64, null: &NullSpec) -> f64 {
    argsup_null(&surprise_at, null).1
}

/// ev̄ for a tabulated posterior: the interpolated posterior mass where the
/// interpolated surprise exceeds s*.
pub fn ev_against_from_grid(
    gd: &GriddedDensity,
    reference: &ReferenceFunction,
    null: &NullSpec,
) -> Result<PartialEValue> {
    reference.validate()?;
    null.validate()?;
    let grid = gd.grid();
    let values = gd.values();
    let canonical: Vec<f64> = grid
        .iter()
        .zip(values)
        .map(|(&t, &p)| reference.canonical_surprise(p, t))
        .collect::<Result<_>>()?;
    let at = |t: f64| {
        reference
            .canonical_surprise(gd.interpolate(t), t)
            .unwrap_or(f64::INFINITY)
    };
    let (null_mode, s_star) = argsup_null(&at, null);
    if s_star.is_infinite() {
        return Err(EValueError::ZeroReference { theta: null_mode });
    }
    let ev_against = density::mass_above(grid, values, &canonical, s_star).clamp(0.0, 1.0);
    Ok(PartialEValue {
        ev_against,
        s_star: s_star / reference.scale(),
        surprise_mode: density::argmax_refined(grid, &canonical),
        null_mode,
        method: Method::Grid,
        reference: reference.clone(),
        null: *null,
        estimator_sd: None,
        warnings: Vec::new(),
    })
}

/// ev̄ from posterior draws: the fraction of draws whose kernel-density
/// surprise exceeds s*, with its binomial standard error.
pub fn ev_against_from_samples(draws: &[f64], reference: &ReferenceFunction, null: &NullSpec) -> Result<PartialEValue> {
    reference.validate()?;
    null.validate()?;
    if draws.len() < MIN_DRAWS {
        return Err(EValueError::TooFewDraws {
            needed: MIN_DRAWS,
            got: draws.len(),
        });
    }
    let mut warnings = Vec::new();
    if draws.len() < RECOMMENDED_DRAWS {
        let msg = format!(
            "only {} draws; at least {RECOMMENDED_DRAWS} are recommended",
            draws.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let kde = KdeModel::fit(draws)?;
    let at_draws = kde.evaluate(draws);
    let canonical: Vec<f64> = draws
        .iter()
        .zip(&at_draws)
        .map(|(&t, &p)| reference.canonical_surprise(p, t))
        .collect::<Result<_>>()?;
    let at = |t: f64| reference.canonical_surprise(kde.density(t), t).unwrap_or(f64::INFINITY);
    let (null_mode, s_star) = argsup_null(&at, null);
    if s_star.is_infinite() {
        return Err(EValueError::ZeroReference { theta: null_mode });
    }
    let n = draws.len() as f64;
    let count = canonical.iter().filter(|&&s| s > s_star).count();
    let ev_against = count as f64 / n;

    let sorted = kde.sorted_samples();
    let scan = density::linspace(sorted[0], sorted[sorted.len() - 1], SCAN_POINTS);
    let scan_values: Vec<f64> = scan.iter().map(|&t| at(t)).collect();
    let surprise_mode = density::argmax_refined(&scan, &scan_values);

    Ok(PartialEValue {
        ev_against,
        s_star: s_star / reference.scale(),
        surprise_mode,
        null_mode,
        method: Method::Samples,
        reference: reference.clone(),
        null: *null,
        estimator_sd: Some((ev_against * (1.0 - ev_against) / n).sqrt()),
        warnings,
    })
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EValueError::Domain(format!("{what} = {p} must lie in [0, 1]")));
    }
    Ok(())
}

/// (sev̄, sev) with sev̄ = F_{k−h}(F_k⁻¹(ev̄)), F_m the χ²_m cdf.
pub fn standardized_ev(ev_against: f64, dims: Dimensions) -> Result<(f64, f64)> {
    dims.validate()?;
    check_probability(ev_against, "ev_against")?;
    let sev_against = if dims.h == 0 || ev_against == 0.0 || ev_against == 1.0 {
        ev_against
    } else {
        let q = chi2_quantile(ev_against, dims.k as f64)?;
        chi2_cdf(q, (dims.k - dims.h) as f64)?
    };
    Ok((sev_against, 1.0 - sev_against))
}

/// ev₀ = χ²_k cdf at the squared mode distance d0.
pub fn asymptotic_ev0(d0: f64, dims: Dimensions) -> Result<f64> {
    dims.validate()?;
    if !(d0 >= 0.0) {
        return Err(EValueError::Domain(format!("d0 = {d0} must be nonnegative")));
    }
    Ok(chi2_cdf(d0, dims.k as f64)?)
}

/// Squared Euclidean distance between two modes.
pub fn mode_distance(full_mode: &[f64], restricted_mode: &[f64]) -> Result<f64> {
    if full_mode.len() != restricted_mode.len() {
        return Err(EValueError::DimensionMismatch {
            left: full_mode.len(),
            right: restricted_mode.len(),
        });
    }
    Ok(full_mode
        .iter()
        .zip(restricted_mode)
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// pv₀ = 1 − χ²_{k−h} cdf(−2λ) for the log relative likelihood λ ≤ 0 of
/// the null maximizer.
pub fn asymptotic_pv0(lambda_m0: f64, dims: Dimensions) -> Result<f64> {
    dims.validate()?;
    if lambda_m0.is_nan() || lambda_m0 > LAMBDA_TOL {
        return Err(EValueError::Domain(format!(
            "log relative likelihood {lambda_m0} must be nonpositive"
        )));
    }
    let stat = (-2.0 * lambda_m0).max(0.0);
    Ok(chi2_sf(stat, (dims.k - dims.h) as f64)?)
}
