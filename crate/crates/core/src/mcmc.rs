//! Adaptive componentwise random-walk Metropolis and convergence diagnostics.
//!
//! Each sweep proposes a Gaussian move for every coordinate in turn. During
//! warmup the per-coordinate step sizes follow a Robbins–Monro recursion on
//! the log scale toward the target acceptance probability; at the end of
//! warmup they are frozen. Chains own independent jump-separated streams of
//! the master seed and may run concurrently; results are always collected in
//! chain order.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, FbstRng};

/// Acceptance probability targeted by the step-size adaptation.
pub const DEFAULT_TARGET_ACCEPTANCE: f64 = 0.44;
/// Environment variable capping the number of chains run concurrently.
pub const THREADS_ENV: &str = "FBST_THREADS";

const ACCEPTANCE_WARN_RANGE: (f64, f64) = (0.1, 0.8);
const ADAPTATION_DECAY: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McmcError {
    #[error("log target is not finite at the initial point of chain {chain} (value {value})")]
    NonFiniteInit { chain: usize, value: f64 },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} chains, got {got}")]
    InsufficientChains { needed: usize, got: usize },
    #[error("need at least {needed} draws per chain, got {got}")]
    InsufficientDraws { needed: usize, got: usize },
    #[error("malformed draws: {0}")]
    MalformedDraws(String),
}

type Result<T> = std::result::Result<T, McmcError>;

/// Sampler settings. `iterations` counts every sweep of a chain, warmup
/// included; `iterations - warmup` draws per chain are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub chains: usize,
    pub initial_step_sizes: Vec<f64>,
    pub target_acceptance: f64,
    pub seed: u64,
}

impl McmcConfig {
    /// Defaults: 4 chains of 2500 iterations with 1000 warmup, unit steps.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            iterations: 2500,
            warmup: 1000,
            chains: 4,
            initial_step_sizes: vec![1.0; dim],
            target_acceptance: DEFAULT_TARGET_ACCEPTANCE,
            seed,
        }
    }

    pub fn kept_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.warmup)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.chains == 0 {
            return Err(McmcError::InvalidConfig("chains must be at least 1".into()));
        }
        if self.warmup >= self.iterations {
            return Err(McmcError::InvalidConfig(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if self.initial_step_sizes.len() != dim {
            return Err(McmcError::InvalidConfig(format!(
                "{} step sizes given for {dim} parameters",
                self.initial_step_sizes.len()
            )));
        }
        if let Some(s) = self.initial_step_sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(McmcError::InvalidConfig(format!(
                "step sizes must be positive, got {s}"
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(McmcError::InvalidConfig(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// Post-warmup draws, one row-major matrix per chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraws {
    names: Vec<String>,
    chains: Vec<Vec<f64>>,
    seed: u64,
    acceptance_rate: Vec<f64>,
    step_sizes: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

impl ParameterDraws {
    /// Builds a draw set from per-chain row lists.
    pub fn new(names: Vec<String>, chains: Vec<Vec<Vec<f64>>>, seed: u64, acceptance_rate: Vec<f64>) -> Result<Self> {
        let width = names.len();
        if chains.is_empty() {
            return Err(McmcError::MalformedDraws("no chains".into()));
        }
        if width == 0 {
            return Err(McmcError::MalformedDraws("no parameters".into()));
        }
        if acceptance_rate.len() != chains.len() {
            return Err(McmcError::MalformedDraws(
                "one acceptance rate per chain required".into(),
            ));
        }
        if let Some(a) = acceptance_rate.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(McmcError::MalformedDraws(format!("acceptance rate {a} outside [0, 1]")));
        }
        let mut flat = Vec::with_capacity(chains.len());
        for (c, rows) in chains.into_iter().enumerate() {
            let mut data = Vec::with_capacity(rows.len() * width);
            for (i, row) in rows.into_iter().enumerate() {
                if row.len() != width {
                    return Err(McmcError::MalformedDraws(format!(
                        "chain {c} row {i} has {} values for {width} parameters",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(McmcError::MalformedDraws(format!("chain {c} row {i} is not finite")));
                }
                data.extend(row);
            }
            flat.push(data);
        }
        let n_chains = flat.len();
        Ok(Self {
            names,
            chains: flat,
            seed,
            acceptance_rate,
            step_sizes: vec![Vec::new(); n_chains],
            warnings: Vec::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn chain_len(&self, chain: usize) -> usize {
        self.chains[chain].len() / self.width()
    }

    pub fn total_draws(&self) -> usize {
        (0..self.n_chains()).map(|c| self.chain_len(c)).sum()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn acceptance_rate(&self) -> &[f64] {
        &self.acceptance_rate
    }

    /// Step sizes in effect after warmup, per chain (empty when unknown).
    pub fn step_sizes(&self) -> &[Vec<f64>] {
        &self.step_sizes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn push_warning(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, chain: usize, iteration: usize) -> &[f64] {
        let w = self.width();
        &self.chains[chain][iteration * w..(iteration + 1) * w]
    }

    pub fn chain_column(&self, chain: usize, param: usize) -> Vec<f64> {
        self.chains[chain]
            .iter()
            .skip(param)
            .step_by(self.width())
            .copied()
            .collect()
    }

    /// All draws of one parameter, chains concatenated in order.
    pub fn column(&self, param: usize) -> Vec<f64> {
        (0..self.n_chains()).flat_map(|c| self.chain_column(c, param)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|i| self.column(i))
    }

    /// Applies `f` to every draw, producing a draw set over `names`.
    /// Chain structure, seed and sampler metadata carry over.
    pub fn map_rows(&self, names: Vec<String>, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let chains = (0..self.n_chains())
            .map(|c| (0..self.chain_len(c)).map(|i| f(self.row(c, i))).collect())
            .collect();
        let mut out = Self::new(names, chains, self.seed, self.acceptance_rate.clone())?;
        out.step_sizes = self.step_sizes.clone();
        out.warnings = self.warnings.clone();
        Ok(out)
    }
}

/// One random-walk Metropolis chain.
pub struct MetropolisChain<'a, F> {
    log_target: &'a F,
    state: Vec<f64>,
    log_density: f64,
    log_steps: Vec<f64>,
    target_acceptance: f64,
    rng: FbstRng,
    adapt_sweeps: usize,
    accepted: usize,
    proposed: usize,
}

impl<'a, F: Fn(&[f64]) -> f64> MetropolisChain<'a, F> {
    pub fn new(
        log_target: &'a F,
        init: &[f64],
        step_sizes: &[f64],
        target_acceptance: f64,
        rng: FbstRng,
    ) -> Result<Self> {
        let log_density = log_target(init);
        if !log_density.is_finite() {
            return Err(McmcError::NonFiniteInit {
                chain: 0,
                value: log_density,
            });
        }
        Ok(Self {
            log_target,
            state: init.to_vec(),
            log_density,
            log_steps: step_sizes.iter().map(|s| s.ln()).collect(),
            target_acceptance,
            rng,
            adapt_sweeps: 0,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn log_density(&self) -> f64 {
        self.log_density
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.log_steps.iter().map(|l| l.exp()).collect()
    }

    /// Fraction of accepted coordinate proposals since the last reset.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    /// One sweep over all coordinates; step sizes move only when `adapt`.
    pub fn sweep(&mut self, adapt: bool) {
        let gain = if adapt {
            self.adapt_sweeps += 1;
            (self.adapt_sweeps as f64).powf(-ADAPTATION_DECAY)
        } else {
            0.0
        };
        for j in 0..self.state.len() {
            let z: f64 = self.rng.sample(StandardNormal);
            let current = self.state[j];
            self.state[j] = current + self.log_steps[j].exp() * z;
            let proposal = (self.log_target)(&self.state);
            let log_ratio = proposal - self.log_density;
            let alpha = if proposal.is_finite() {
                log_ratio.min(0.0).exp()
            } else {
                0.0
            };
            let u: f64 = self.rng.random();
            self.proposed += 1;
            if u < alpha {
                self.log_density = proposal;
                self.accepted += 1;
            } else {
                self.state[j] = current;
            }
            if adapt {
                self.log_steps[j] = (self.log_steps[j] + gain * (alpha - self.target_acceptance)).clamp(-40.0, 40.0);
            }
        }
    }
}

struct ChainOutput {
    rows: Vec<Vec<f64>>,
    acceptance: f64,
    steps: Vec<f64>,
}

fn run_chain<F: Fn(&[f64]) -> f64>(
    log_target: &F,
    init: &[f64],
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let rng = rng::stream(config.seed, chain);
    let mut sampler = MetropolisChain::new(
        log_target,
        init,
        &config.initial_step_sizes,
        config.target_acceptance,
        rng,
    )
    .map_err(|e| match e {
        McmcError::NonFiniteInit { value, .. } => McmcError::NonFiniteInit { chain, value },
        other => other,
    })?;
    for _ in 0..config.warmup {
        sampler.sweep(true);
    }
    sampler.reset_counters();
    let steps = sampler.step_sizes();
    let mut rows = Vec::with_capacity(config.kept_per_chain());
    for _ in config.warmup..config.iterations {
        sampler.sweep(false);
        rows.push(sampler.state().to_vec());
    }
    Ok(ChainOutput {
        rows,
        acceptance: sampler.acceptance_rate(),
        steps,
    })
}

fn thread_cap(chains: usize) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(chains, |n| n.min(chains))
}

/// Runs `config.chains` chains from the same starting point.
pub fn rw_metropolis<F>(log_target: &F, names: &[String], init: &[f64], config: &McmcConfig) -> Result<ParameterDraws>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let inits = vec![init.to_vec(); config.chains];
    rw_metropolis_multi(log_target, names, &inits, config)
}

/// Runs one chain per entry of `inits` (which must match `config.chains`).
pub fn rw_metropolis_multi<F>(
    log_target: &F,
    names: &[String],
    inits: &[Vec<f64>],
    config: &McmcConfig,
) -> Result<ParameterDraws>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = names.len();
    config.validate(dim)?;
    if inits.len() != config.chains {
        return Err(McmcError::InvalidConfig(format!(
            "{} initial points for {} chains",
            inits.len(),
            config.chains
        )));
    }
    if let Some(bad) = inits.iter().find(|x| x.len() != dim) {
        return Err(McmcError::InvalidConfig(format!(
            "initial point has {} values for {dim} parameters",
            bad.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap(config.chains))
        .build()
        .map_err(|e| McmcError::InvalidConfig(format!("thread pool: {e}")))?;
    let outputs: Vec<Result<ChainOutput>> = pool.install(|| {
        inits
            .par_iter()
            .enumerate()
            .map(|(c, init)| run_chain(log_target, init, config, c))
            .collect()
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let acceptance: Vec<f64> = outputs.iter().map(|o| o.acceptance).collect();
    let steps: Vec<Vec<f64>> = outputs.iter().map(|o| o.steps.clone()).collect();
    let rows = outputs.into_iter().map(|o| o.rows).collect();
    let mut draws = ParameterDraws::new(names.to_vec(), rows, config.seed, acceptance)?;
    draws.step_sizes = steps;
    for (c, &a) in draws.acceptance_rate.clone().iter().enumerate() {
        if !(ACCEPTANCE_WARN_RANGE.0..=ACCEPTANCE_WARN_RANGE.1).contains(&a) {
            let msg =
                format!("chain {c}: post-warmup acceptance rate {a:.3} outside [0.1, 0.8]; adaptation may have failed");
            log::warn!("{msg}");
            draws.warnings.push(msg);
        }
    }
    Ok(draws)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Split-chain potential scale reduction factor per parameter.
///
/// Each chain (truncated to the shortest chain, and to an even length) is
/// split in half; R̂ = √(var⁺/W) with var⁺ = (L−1)/L·W + B/L over the 2m
/// half-chains of length L.
pub fn gelman_rubin(draws: &ParameterDraws) -> Result<Vec<f64>> {
    let m = draws.n_chains();
    if m < 2 {
        return Err(McmcError::InsufficientChains { needed: 2, got: m });
    }
    let n = (0..m).map(|c| draws.chain_len(c)).min().unwrap_or(0);
    if n < 10 {
        return Err(McmcError::InsufficientDraws { needed: 10, got: n });
    }
    let half = n / 2;
    Ok((0..draws.width())
        .map(|p| {
            let mut pieces = Vec::with_capacity(2 * m);
            for c in 0..m {
                let col = draws.chain_column(c, p);
                pieces.push(col[..half].to_vec());
                pieces.push(col[half..2 * half].to_vec());
            }
            let means: Vec<f64> = pieces.iter().map(|s| mean(s)).collect();
            let w = mean(&pieces.iter().map(|s| sample_variance(s)).collect::<Vec<_>>());
            let b_over_l = sample_variance(&means);
            let l = half as f64;
            if w == 0.0 {
                return if b_over_l == 0.0 { 1.0 } else { f64::INFINITY };
            }
            let var_plus = (l - 1.0) / l * w + b_over_l;
            (var_plus / w).sqrt()
        })
        .collect())
}

/// Autocovariance at `lag` (biased, divided by n).
fn autocovariance(xs: &[f64], centre: f64, lag: usize) -> f64 {
    let n = xs.len();
    xs[..n - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - centre) * (b - centre))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size per parameter.
///
/// Autocorrelations combine within-chain autocovariances with the
/// between-chain variance; the sum is truncated by Geyer's initial
/// monotone positive sequence. Results are capped at the total draw count.
/// A constant parameter gets ESS 0 and a warning.
pub fn effective_sample_size(draws: &ParameterDraws) -> Vec<f64> {
    let m = draws.n_chains();
    let n = (0..m).map(|c| draws.chain_len(c)).min().unwrap_or(0);
    let total = (m * n) as f64;
    (0..draws.width())
        .map(|p| {
            if n < 4 {
                return 0.0;
            }
            let chains: Vec<Vec<f64>> = (0..m).map(|c| draws.chain_column(c, p)[..n].to_vec()).collect();
            let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
            let acov0: Vec<f64> = chains
                .iter()
                .zip(&means)
                .map(|(c, &mu)| autocovariance(c, mu, 0))
                .collect();
            let nf = n as f64;
            let w = mean(&acov0) * nf / (nf - 1.0);
            let b_over_n = if m > 1 { sample_variance(&means) } else { 0.0 };
            let var_plus = (nf - 1.0) / nf * w + b_over_n;
            if !(var_plus > 0.0) {
                log::warn!(
                    "parameter {} is constant across all draws; ESS reported as 0",
                    draws.names()[p]
                );
                return 0.0;
            }
            let rho = |lag: usize| -> f64 {
                let acov = mean(
                    &chains
                        .iter()
                        .zip(&means)
                        .map(|(c, &mu)| autocovariance(c, mu, lag))
                        .collect::<Vec<_>>(),
                );
                1.0 - (w - acov) / var_plus
            };
            let mut sum_pairs = 0.0;
            let mut prev_pair = f64::INFINITY;
            let mut k = 0;
            while 2 * k + 1 < n {
                let r0 = if k == 0 { 1.0 } else { rho(2 * k) };
                let pair = r0 + rho(2 * k + 1);
                if pair <= 0.0 {
                    break;
                }
                let pair = pair.min(prev_pair);
                sum_pairs += pair;
                prev_pair = pair;
                k += 1;
            }
            let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10().max(1.0));
            (total / tau).min(total)
        })
        .collect()
}
