//! Run configurations and the pipelines behind each subcommand.
//!
//! A [`RunConfig`] is everything needed to reproduce a report: it is echoed
//! into the report, and `--verify` feeds it back through [`run`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fbst_core::density::{linspace, GriddedDensity, KdeModel};
use fbst_core::evalue::{ev_against_from_grid, ev_against_from_samples, PartialEValue};
use fbst_core::models::{
    fit_regression, savage_dickey_bf01, simulate_two_groups, summarize_draws, summarize_grid,
    ttest_log_relative_likelihood, ttest_marginal_from_draws, ttest_mcmc, ttest_posterior_grid, ModelError,
    RegressionFit, RegressionSpec, TTestSpec,
};
use fbst_core::{Dimensions, DistributionSpec, EValueReport, McmcConfig, NullSpec, ParameterDraws, ReferenceFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{self, IngestError};
use crate::plot::{self, PlotError, SurprisePlot};
use crate::report::{BayesFactor, CrossCheck, Diagnostics, ErrorInfo, NamedEValue, ReportDocument};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;

/// Reference keyword meaning "use the model's prior".
pub const PRIOR_REFERENCE: &str = "prior";

const PLOT_POINTS: usize = 512;

const CHI2_NOTE: &str = "ev0 is the chi-square cdf with k degrees of freedom at d0. The kitchen-rolls \
reference value 0.6463 at d0 = 3.26 equals the chi-square cdf with 3 degrees of freedom (k = 3), so a \
subscript of 2 printed next to it is treated as a typo.";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Validation(String),
    #[error("{message}")]
    Convergence { message: String, fit: Box<RegressionFit> },
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Convergence { .. } => EXIT_CONVERGENCE,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Convergence { .. } => "convergence",
            Self::Io(_) => "io",
        }
    }
}

impl From<IngestError> for RunError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => Self::Io(e.to_string()),
            IngestError::Model(m) => m.into(),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ConvergenceFailure { reason, fit } => Self::Convergence {
                message: format!("convergence failure: {reason}"),
                fit,
            },
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<fbst_core::evalue::EValueError> for RunError {
    fn from(e: fbst_core::evalue::EValueError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<fbst_core::density::DensityError> for RunError {
    fn from(e: fbst_core::density::DensityError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<fbst_core::mcmc::McmcError> for RunError {
    fn from(e: fbst_core::mcmc::McmcError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<PlotError> for RunError {
    fn from(e: PlotError) -> Self {
        Self::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Where the input CSV comes from. Files are fingerprinted so a later
/// verification can tell when the data changed; stdin input is kept inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl InputSource {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| RunError::Io(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.display().to_string()),
            sha256: Some(sha256_hex(&bytes)),
            inline: None,
        })
    }

    pub fn inline(text: String) -> Self {
        Self {
            path: None,
            sha256: None,
            inline: Some(text),
        }
    }

    /// The input text, checked against the recorded fingerprint.
    pub fn load(&self) -> Result<String> {
        if let Some(text) = &self.inline {
            return Ok(text.clone());
        }
        let path = self
            .path
            .as_deref()
            .ok_or_else(|| RunError::Validation("no input given".into()))?;
        let text = ingest::read_text(Path::new(path))?;
        if let Some(expected) = &self.sha256 {
            let actual = sha256_hex(text.as_bytes());
            if &actual != expected {
                return Err(RunError::Validation(format!(
                    "{path} has changed: sha256 {actual}, expected {expected}"
                )));
            }
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    /// An SVG file, or for `regress` a directory receiving one SVG per
    /// tested coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum RunConfig {
    Ttest(TTestConfig),
    Regress(RegressConfig),
    Simulate(SimulateConfig),
    Evalue(EvalueConfig),
}

impl RunConfig {
    pub fn outputs(&self) -> &Outputs {
        match self {
            Self::Ttest(c) => &c.outputs,
            Self::Regress(c) => &c.outputs,
            Self::Simulate(c) => &c.outputs,
            Self::Evalue(c) => &c.outputs,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Ttest(c) => c.seed,
            Self::Regress(c) => Some(c.mcmc.seed),
            Self::Simulate(c) => Some(c.seed),
            Self::Evalue(_) => None,
        }
    }
}

/// Bayesian two-sample t-test on the effect size δ = (μ₁ − μ₂)/σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestConfig {
    pub input: InputSource,
    pub group_col: String,
    pub value_col: String,
    /// Group order; sorted labels when absent.
    pub groups: Option<[String; 2]>,
    pub prior_scale: f64,
    /// `prior`, `flat`, or a distribution such as `cauchy:0,0.7071`.
    pub reference: String,
    pub grid_range: (f64, f64),
    pub grid_points: usize,
    pub theta0: f64,
    pub dims: Dimensions,
    /// Joint-sampler settings for the cross-check; no cross-check when absent.
    pub cross_check: Option<McmcConfig>,
    pub seed: Option<u64>,
    pub outputs: Outputs,
}

impl TTestConfig {
    pub fn new(input: InputSource) -> Self {
        let spec = TTestSpec::default();
        Self {
            input,
            group_col: "group".into(),
            value_col: "value".into(),
            groups: None,
            prior_scale: spec.prior_scale,
            reference: PRIOR_REFERENCE.into(),
            grid_range: spec.grid_range,
            grid_points: spec.grid_points,
            theta0: 0.0,
            dims: Dimensions { k: 3, h: 2 },
            cross_check: None,
            seed: None,
            outputs: Outputs::default(),
        }
    }
}

/// Bayesian linear regression with a point-null FBST per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressConfig {
    pub input: InputSource,
    pub formula: String,
    pub coefficient_prior: DistributionSpec,
    pub intercept_prior: DistributionSpec,
    pub sigma_prior: DistributionSpec,
    /// `flat`, `prior` (the coefficient prior), or a distribution.
    pub reference: String,
    pub mcmc: McmcConfig,
    pub max_rhat: f64,
    pub min_ess_per_chain: f64,
    /// Defaults to (p + 2, p + 1).
    pub dims: Option<Dimensions>,
    /// Coefficients to test; every slope when empty.
    pub test: Vec<String>,
    pub outputs: Outputs,
}

impl RegressConfig {
    pub fn new(input: InputSource, formula: String, seed: u64) -> Self {
        let spec = RegressionSpec::new(seed);
        Self {
            input,
            formula,
            coefficient_prior: spec.coefficient_prior,
            intercept_prior: spec.intercept_prior,
            sigma_prior: spec.sigma_prior,
            reference: "flat".into(),
            mcmc: spec.mcmc,
            max_rhat: spec.max_rhat,
            min_ess_per_chain: spec.min_ess_per_chain,
            dims: None,
            test: Vec::new(),
            outputs: Outputs::default(),
        }
    }
}

/// Two normal groups, written as a `group,value` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub n: [usize; 2],
    pub mu: [f64; 2],
    pub sd: [f64; 2],
    pub seed: u64,
    /// CSV destination; stdout when absent.
    pub output: Option<String>,
    pub outputs: Outputs,
}

/// FBST from a CSV of posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalueConfig {
    pub input: InputSource,
    pub param: String,
    pub null: NullSpec,
    pub reference: String,
    pub dims: Dimensions,
    pub d0: Option<f64>,
    pub outputs: Outputs,
}

/// Result of a run: the report, the process exit code, and text destined
/// for stdout (the simulated CSV).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ReportDocument,
    pub exit_code: i32,
    pub stdout: Option<String>,
}

/// Executes `config`. Output files are written only when `write_outputs`
/// is set; errors are recorded in the report rather than returned.
pub fn run(config: &RunConfig, write_outputs: bool) -> RunOutcome {
    let mut report = ReportDocument::new(config.clone());
    let result = match config {
        RunConfig::Ttest(c) => run_ttest(c, &mut report, write_outputs).map(|_| None),
        RunConfig::Regress(c) => run_regress(c, &mut report, write_outputs).map(|_| None),
        RunConfig::Simulate(c) => run_simulate(c, &mut report, write_outputs),
        RunConfig::Evalue(c) => run_evalue(c, &mut report, write_outputs).map(|_| None),
    };
    let (exit_code, stdout) = match result {
        Ok(out) => (EXIT_OK, out),
        Err(e) => {
            log::error!("{e}");
            if let RunError::Convergence { fit, .. } = &e {
                report.diagnostics = Some(diagnostics(&fit.draws, Some(&fit.rhat), &fit.ess));
            }
            report.error = Some(ErrorInfo {
                kind: e.kind().into(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            });
            (e.exit_code(), None)
        }
    };
    if write_outputs {
        if let Some(path) = &config.outputs().report {
            if let Err(e) = write_file(Path::new(path), &report.to_json()) {
                log::error!("{e}");
                if exit_code == EXIT_OK {
                    return RunOutcome {
                        report,
                        exit_code: EXIT_VALIDATION,
                        stdout,
                    };
                }
            }
        }
    }
    RunOutcome {
        report,
        exit_code,
        stdout,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
}

fn parse_reference(text: &str, prior: Option<DistributionSpec>) -> Result<ReferenceFunction> {
    if text.trim().eq_ignore_ascii_case(PRIOR_REFERENCE) {
        let prior = prior.ok_or_else(|| RunError::Validation("reference `prior` needs a model prior".into()))?;
        return Ok(ReferenceFunction::distribution(prior)?);
    }
    text.parse::<ReferenceFunction>()
        .map_err(|e| RunError::Validation(format!("reference {text:?}: {e}")))
}

fn diagnostics(draws: &ParameterDraws, rhat: Option<&[f64]>, ess: &[f64]) -> Diagnostics {
    let rhat = match rhat {
        Some(r) => r.iter().map(|&v| Some(v)).collect(),
        None => match fbst_core::mcmc::gelman_rubin(draws) {
            Ok(r) => r.into_iter().map(Some).collect(),
            Err(_) => vec![None; draws.width()],
        },
    };
    Diagnostics {
        parameters: draws.names().to_vec(),
        rhat,
        ess: ess.to_vec(),
        acceptance_rate: draws.acceptance_rate().to_vec(),
        step_sizes: draws.step_sizes().to_vec(),
        warnings: draws.warnings().to_vec(),
    }
}

/// Surprise table of a KDE fitted to `samples`, spanning the draws plus
/// three bandwidths on each side, extended to reach `include`.
fn kde_surprise_table(samples: &[f64], reference: &ReferenceFunction, include: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let kde = KdeModel::fit(samples)?;
    let sorted = kde.sorted_samples();
    let pad = 3.0 * kde.bandwidth();
    let lo = (sorted[0] - pad).min(include - pad);
    let hi = (sorted[sorted.len() - 1] + pad).max(include + pad);
    let grid = linspace(lo, hi, PLOT_POINTS);
    let dens = kde.evaluate(&grid);
    let s = reference.surprise_values(&grid, &dens)?;
    Ok((grid, s))
}

fn write_plot(
    path: &Path,
    theta: &[f64],
    surprise: &[f64],
    partial: &EValueReport,
    title: &str,
    x_label: &str,
) -> Result<()> {
    plot::write(
        &SurprisePlot {
            theta,
            surprise,
            s_star: partial.s_star,
            theta0: partial.null_mode,
            ev_against: partial.ev_against,
            title,
            x_label,
        },
        path,
    )?;
    Ok(())
}

/// Kolmogorov–Smirnov distance between draws and a gridded cdf.
fn ks_against_grid(samples: &[f64], gd: &GriddedDensity) -> f64 {
    let cum = gd.cumulative();
    let g = gd.grid();
    let cdf = |x: f64| {
        let j = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1);
        let w = ((x - g[j - 1]) / (g[j] - g[j - 1])).clamp(0.0, 1.0);
        cum[j - 1] + w * (cum[j] - cum[j - 1])
    };
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn run_ttest(c: &TTestConfig, report: &mut ReportDocument, write: bool) -> Result<()> {
    if c.cross_check.is_some() && c.seed.is_none() {
        return Err(RunError::Validation("the MCMC cross-check needs --seed".into()));
    }
    if c.outputs.draws.is_some() && c.cross_check.is_none() {
        return Err(RunError::Validation("--draws needs the MCMC cross-check".into()));
    }
    let table = ingest::parse_table(&c.input.load()?)?;
    report.input_metadata = table.metadata.clone();
    let data = ingest::two_groups(&table, &c.group_col, &c.value_col, c.groups.as_ref())?;
    let mut spec = TTestSpec {
        prior_scale: c.prior_scale,
        reference: None,
        grid_range: c.grid_range,
        grid_points: c.grid_points,
    };
    spec.validate()?;
    spec.reference = Some(parse_reference(&c.reference, Some(spec.prior()))?);
    let reference = spec.reference_function();
    let null = NullSpec::point(c.theta0)?;
    let summary = data.summary();
    let mut ds = serde_json::to_value(summary).expect("summary serializes");
    ds["labels"] = serde_json::json!(data.labels);
    report.data_summary = Some(ds);

    let gd = ttest_posterior_grid(&data, &spec)?;
    let partial = ev_against_from_grid(&gd, &reference, &null)?;
    let lambda = ttest_log_relative_likelihood(summary.t_obs, summary.n1, summary.n2, c.theta0)?;
    let ev = EValueReport::assemble(partial, c.dims, None, Some(lambda))?;
    report.summaries.push(summarize_grid("delta", &gd)?);
    let bf01 = savage_dickey_bf01(&gd, &spec.prior(), c.theta0)?;
    report.bayes_factor = Some(BayesFactor {
        bf01,
        bf10: 1.0 / bf01,
        prior: spec.prior().to_string(),
        theta0: c.theta0,
    });
    report.notes.push(CHI2_NOTE.into());

    if let Some(mcmc) = &c.cross_check {
        let mut config = mcmc.clone();
        config.seed = c.seed.expect("checked above");
        let draws = ttest_mcmc(&data, &spec, &config)?;
        let delta = draws.column_by_name("delta").expect("sampler reports delta");
        let kde = ev_against_from_samples(&delta, &reference, &null)?;
        let rb = ttest_marginal_from_draws(&data, &spec, &draws)?;
        let mcmc = ev_against_from_grid(&rb, &reference, &null)?;
        report.cross_check = Some(CrossCheck {
            parameter: "delta".into(),
            ev_against_grid: ev.ev_against,
            ev_against_mcmc: mcmc.ev_against,
            ev_against_kde: kde.ev_against,
            ks_distance: ks_against_grid(&delta, &gd),
        });
        let ess = fbst_core::mcmc::effective_sample_size(&draws);
        report.diagnostics = Some(diagnostics(&draws, None, &ess));
        if write {
            if let Some(path) = &c.outputs.draws {
                write_file(Path::new(path), &ingest::draws_csv(&draws))?;
            }
        }
    }
    if write {
        if let Some(path) = &c.outputs.plot {
            let s = reference.surprise_values(gd.grid(), gd.values())?;
            let title = format!(
                "Surprise of δ ({} vs {}), reference {}",
                data.labels[0], data.labels[1], reference
            );
            write_plot(Path::new(path), gd.grid(), &s, &ev, &title, "effect size δ")?;
        }
    }
    report.evalues.push(NamedEValue {
        parameter: "delta".into(),
        evalue: ev,
    });
    Ok(())
}

fn run_regress(c: &RegressConfig, report: &mut ReportDocument, write: bool) -> Result<()> {
    let formula: ingest::Formula = c.formula.parse()?;
    let table = ingest::parse_table(&c.input.load()?)?;
    report.input_metadata = table.metadata.clone();
    let data = ingest::regression(&table, &formula)?;
    let spec = RegressionSpec {
        coefficient_prior: c.coefficient_prior,
        intercept_prior: c.intercept_prior,
        sigma_prior: c.sigma_prior,
        mcmc: c.mcmc.clone(),
        reference: parse_reference(&c.reference, Some(c.coefficient_prior))?,
        max_rhat: c.max_rhat,
        min_ess_per_chain: c.min_ess_per_chain,
    };
    spec.validate()?;
    let p = data.p();
    let dims = c.dims.unwrap_or(Dimensions { k: p + 2, h: p + 1 });
    dims.validate()?;
    let names = data.parameter_names();
    let tested: Vec<String> = if c.test.is_empty() {
        data.labels()[1..].to_vec()
    } else {
        c.test.clone()
    };
    for t in &tested {
        if !names.contains(t) {
            return Err(RunError::Validation(format!(
                "unknown coefficient {t:?}; available: {}",
                names.join(", ")
            )));
        }
    }
    report.data_summary = Some(serde_json::json!({
        "n": data.n(),
        "p": p,
        "response": data.response(),
        "columns": data.labels(),
    }));

    let fit = fit_regression(&data, &spec)?;
    report.diagnostics = Some(diagnostics(&fit.draws, Some(&fit.rhat), &fit.ess));
    report.summaries = summarize_draws(&fit.draws)?;
    if write {
        if let Some(path) = &c.outputs.draws {
            write_file(Path::new(path), &ingest::draws_csv(&fit.draws))?;
        }
        if let Some(dir) = &c.outputs.plot {
            fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("cannot create {dir}: {e}")))?;
        }
    }
    for name in tested {
        let ev = fit.coefficient_fbst(&name, &spec.reference, dims)?;
        if write {
            if let Some(dir) = &c.outputs.plot {
                let column = fit.draws.column_by_name(&name).expect("validated name");
                let (grid, s) = kde_surprise_table(&column, &spec.reference, ev.null_mode)?;
                let file: PathBuf = Path::new(dir).join(format!("{}.svg", sanitize(&name)));
                write_plot(&file, &grid, &s, &ev, &format!("Surprise of {name}"), &name)?;
            }
        }
        report.evalues.push(NamedEValue {
            parameter: name,
            evalue: ev,
        });
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' {
                ch
            } else {
                '_'
            }
        })
        .collect()
}

fn run_simulate(c: &SimulateConfig, report: &mut ReportDocument, write: bool) -> Result<Option<String>> {
    let (data, true_effect) = simulate_two_groups(c.n[0], c.mu[0], c.sd[0], c.n[1], c.mu[1], c.sd[1], c.seed)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), c.seed.to_string());
    meta.insert("true_effect".to_string(), format!("{true_effect:?}"));
    let csv = ingest::two_groups_csv(&data, &meta);
    let mut ds = serde_json::to_value(data.summary()).expect("summary serializes");
    ds["true_effect"] = serde_json::json!(true_effect);
    report.data_summary = Some(ds);
    report.input_metadata = meta;
    match &c.output {
        Some(path) => {
            if write {
                write_file(Path::new(path), &csv)?;
            }
            Ok(None)
        }
        None => Ok(Some(csv)),
    }
}

fn run_evalue(c: &EvalueConfig, report: &mut ReportDocument, write: bool) -> Result<()> {
    let table = ingest::parse_table(&c.input.load()?)?;
    report.input_metadata = table.metadata.clone();
    let draws = ingest::draws(&table)?;
    let column = draws.column_by_name(&c.param).ok_or_else(|| {
        RunError::Validation(format!(
            "no column {:?}; available: {}",
            c.param,
            draws.names().join(", ")
        ))
    })?;
    let reference = parse_reference(&c.reference, None)?;
    c.null.validate()?;
    let partial: PartialEValue = ev_against_from_samples(&column, &reference, &c.null)?;
    let ev = EValueReport::assemble(partial, c.dims, c.d0, None)?;
    let ess = fbst_core::mcmc::effective_sample_size(&draws);
    report.diagnostics = Some(diagnostics(&draws, None, &ess));
    report.summaries = summarize_draws(&draws)?
        .into_iter()
        .filter(|s| s.name == c.param)
        .collect();
    report.notes.push(CHI2_NOTE.into());
    if write {
        if let Some(path) = &c.outputs.plot {
            let (grid, s) = kde_surprise_table(&column, &reference, ev.null_mode)?;
            write_plot(
                Path::new(path),
                &grid,
                &s,
                &ev,
                &format!("Surprise of {}", c.param),
                &c.param,
            )?;
        }
    }
    report.evalues.push(NamedEValue {
        parameter: c.param.clone(),
        evalue: ev,
    });
    Ok(())
}
