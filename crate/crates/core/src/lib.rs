//! Full Bayesian Significance Test (FBST) toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`special`] and [`distributions`]: special functions and the handful of
//!   distribution families the models need (pdf, χ² cdf/quantile, noncentral t).
//! - [`density`]: evaluable posterior densities, either tabulated on a grid or
//!   estimated from draws with a Gaussian kernel.
//! - [`mcmc`]: an adaptive componentwise random-walk Metropolis sampler with
//!   split-R̂ and effective-sample-size diagnostics.
//! - [`evalue`]: surprise functions, the tangential set and the e-value family
//!   (ev̄, ev, sev̄, sev, ev₀, pv₀).
//! - [`models`]: the Bayesian two-sample t-test and Bayesian linear regression,
//!   Savage–Dickey Bayes factors and data simulators.

// NaN-aware comparisons are written as `!(a < b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod distributions;
pub mod evalue;
pub mod mcmc;
pub mod models;
mod quadrature;
pub mod rng;
pub mod special;

pub use density::{GriddedDensity, KdeModel};
pub use distributions::DistributionSpec;
pub use evalue::{Dimensions, EValueReport, NullSpec, ReferenceFunction};
pub use mcmc::{McmcConfig, ParameterDraws};
