use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fbst_cli::report::{self, ReportDocument};
use fbst_cli::run::{
    self, EvalueConfig, InputSource, Outputs, RegressConfig, RunConfig, SimulateConfig, TTestConfig, EXIT_VALIDATION,
};
use fbst_core::{Dimensions, DistributionSpec, McmcConfig, NullSpec};

/// Full Bayesian Significance Test: e-values for sharp hypotheses.
#[derive(Debug, Parser)]
#[command(name = "fbst", version, about, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Re-run the configuration recorded in a report and compare every field
    /// except the timestamp.
    #[arg(long, value_name = "REPORT")]
    verify: Option<PathBuf>,
    /// Decimal places in the terminal summary (reports keep full precision).
    #[arg(long, default_value_t = 4, global = true)]
    digits: usize,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bayesian two-sample t-test on the effect size δ.
    Ttest(TTestArgs),
    /// Bayesian linear regression with a point-null e-value per coefficient.
    Regress(RegressArgs),
    /// Simulate a data set.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// E-value from a CSV of posterior draws.
    Evalue(EvalueArgs),
}

#[derive(Debug, Subcommand)]
enum SimulateCommand {
    /// Two normal groups as a `group,value` CSV with `# true_effect=` metadata.
    TwoGroups(SimulateArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input CSV (comma- or semicolon-delimited, with header).
    #[arg(
        long,
        value_name = "CSV",
        required_unless_present = "stdin",
        conflicts_with = "stdin"
    )]
    data: Option<PathBuf>,
    /// Read the CSV from standard input.
    #[arg(long)]
    stdin: bool,
}

impl InputArgs {
    fn source(&self) -> anyhow::Result<InputSource> {
        if self.stdin {
            let mut text = String::new();
            io::stdin()
                .read_to_string(&mut text)
                .context("reading standard input")?;
            return Ok(InputSource::inline(text));
        }
        let path = self.data.as_ref().expect("clap enforces --data or --stdin");
        Ok(InputSource::from_path(path)?)
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// JSON report path; the report goes to stdout when absent.
    #[arg(long, value_name = "JSON")]
    report: Option<String>,
    /// SVG surprise plot (a directory for `regress`).
    #[arg(long, value_name = "SVG")]
    plot: Option<String>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Sweeps per chain, warmup included.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    target_acceptance: Option<f64>,
}

impl SamplerArgs {
    fn apply(&self, c: &mut McmcConfig) {
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.warmup {
            c.warmup = v;
        }
        if let Some(v) = self.chains {
            c.chains = v;
        }
        if let Some(v) = self.target_acceptance {
            c.target_acceptance = v;
        }
    }
}

#[derive(Debug, Args)]
struct TTestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long, default_value = "value")]
    value_col: String,
    /// Group order as `first,second` (δ = (μ_first − μ_second)/σ); sorted labels by default.
    #[arg(long, value_parser = parse_labels)]
    groups: Option<[String; 2]>,
    /// Scale of the Cauchy prior on δ.
    #[arg(long, default_value_t = std::f64::consts::FRAC_1_SQRT_2)]
    prior_scale: f64,
    /// `prior`, `flat`, or a distribution such as `cauchy:0,0.7071`, optionally `*scale`.
    #[arg(long, default_value = "prior")]
    reference: String,
    #[arg(long, value_parser = parse_f64_pair, default_value = "-6,6", allow_hyphen_values = true)]
    grid_range: (f64, f64),
    #[arg(long, default_value_t = fbst_core::density::DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Null value of δ.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta0: f64,
    /// Parameter-space and null-set dimensions `k,h`.
    #[arg(long, default_value = "3,2")]
    dims: Dimensions,
    /// Also sample the joint posterior and compare it with the grid (needs --seed).
    #[arg(long)]
    cross_check: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    outputs: OutputArgs,
    /// CSV of the cross-check draws.
    #[arg(long, value_name = "CSV")]
    draws: Option<String>,
}

#[derive(Debug, Args)]
struct RegressArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `response ~ term + term + ...`
    #[arg(long)]
    formula: String,
    #[arg(long, default_value = "normal:0,1")]
    coefficient_prior: DistributionSpec,
    #[arg(long, default_value = "normal:0,10")]
    intercept_prior: DistributionSpec,
    #[arg(long, default_value = "exponential:1")]
    sigma_prior: DistributionSpec,
    /// `flat`, `prior` (the coefficient prior), or a distribution.
    #[arg(long, default_value = "flat")]
    reference: String,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.05)]
    max_rhat: f64,
    #[arg(long, default_value_t = 100.0)]
    min_ess_per_chain: f64,
    /// `k,h`; defaults to (p + 2, p + 1).
    #[arg(long)]
    dims: Option<Dimensions>,
    /// Comma-separated coefficients to test; every slope by default.
    #[arg(long, value_delimiter = ',')]
    test: Vec<String>,
    #[command(flatten)]
    outputs: OutputArgs,
    #[arg(long, value_name = "CSV")]
    draws: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Group size, or `n1,n2`.
    #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
    n: Vec<usize>,
    /// Group means `mu1,mu2`.
    #[arg(long, value_parser = parse_f64_pair, allow_hyphen_values = true)]
    mu: (f64, f64),
    /// Group standard deviations `sd1,sd2`.
    #[arg(long, value_parser = parse_f64_pair)]
    sd: (f64, f64),
    #[arg(long)]
    seed: u64,
    /// CSV destination; stdout by default.
    #[arg(long, value_name = "CSV")]
    output: Option<String>,
    #[arg(long, value_name = "JSON")]
    report: Option<String>,
}

#[derive(Debug, Args)]
struct EvalueArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Column of the draws to test.
    #[arg(long)]
    param: String,
    /// Point null value.
    #[arg(
        long,
        allow_hyphen_values = true,
        required_unless_present = "interval",
        conflicts_with = "interval"
    )]
    theta0: Option<f64>,
    /// Interval null `lo,hi`.
    #[arg(long, value_parser = parse_f64_pair, allow_hyphen_values = true)]
    interval: Option<(f64, f64)>,
    #[arg(long, default_value = "flat")]
    reference: String,
    /// `k,h`
    #[arg(long)]
    dims: Dimensions,
    /// Squared mode distance for ev0; the surprise-mode distance by default.
    #[arg(long)]
    d0: Option<f64>,
    #[command(flatten)]
    outputs: OutputArgs,
}

fn parse_f64_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_labels(s: &str) -> Result<[String; 2], String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `first,second`, got {s:?}"))?;
    Ok([a.trim().to_string(), b.trim().to_string()])
}

fn outputs(o: &OutputArgs, draws: Option<String>) -> Outputs {
    Outputs {
        report: o.report.clone(),
        plot: o.plot.clone(),
        draws,
    }
}

fn build_config(command: Command) -> anyhow::Result<RunConfig> {
    Ok(match command {
        Command::Ttest(a) => {
            let mut c = TTestConfig::new(a.input.source()?);
            c.group_col = a.group_col;
            c.value_col = a.value_col;
            c.groups = a.groups;
            c.prior_scale = a.prior_scale;
            c.reference = a.reference;
            c.grid_range = a.grid_range;
            c.grid_points = a.grid_points;
            c.theta0 = a.theta0;
            c.dims = a.dims;
            c.seed = a.seed;
            if a.cross_check {
                let mut m = McmcConfig {
                    iterations: 11_000,
                    warmup: 1000,
                    initial_step_sizes: Vec::new(),
                    ..McmcConfig::new(3, 0)
                };
                a.sampler.apply(&mut m);
                m.seed = a.seed.unwrap_or(0);
                c.cross_check = Some(m);
            }
            c.outputs = outputs(&a.outputs, a.draws);
            RunConfig::Ttest(c)
        }
        Command::Regress(a) => {
            let mut c = RegressConfig::new(a.input.source()?, a.formula, a.seed);
            c.coefficient_prior = a.coefficient_prior;
            c.intercept_prior = a.intercept_prior;
            c.sigma_prior = a.sigma_prior;
            c.reference = a.reference;
            a.sampler.apply(&mut c.mcmc);
            c.max_rhat = a.max_rhat;
            c.min_ess_per_chain = a.min_ess_per_chain;
            c.dims = a.dims;
            c.test = a.test;
            c.outputs = outputs(&a.outputs, a.draws);
            RunConfig::Regress(c)
        }
        Command::Simulate(SimulateCommand::TwoGroups(a)) => {
            let n = match a.n[..] {
                [n] => [n, n],
                [n1, n2] => [n1, n2],
                _ => bail!("--n takes one or two sizes"),
            };
            RunConfig::Simulate(SimulateConfig {
                n,
                mu: [a.mu.0, a.mu.1],
                sd: [a.sd.0, a.sd.1],
                seed: a.seed,
                output: a.output,
                outputs: Outputs {
                    report: a.report,
                    plot: None,
                    draws: None,
                },
            })
        }
        Command::Evalue(a) => {
            let null = match (a.theta0, a.interval) {
                (Some(t), _) => NullSpec::point(t)?,
                (None, Some((lo, hi))) => NullSpec::interval(lo, hi)?,
                (None, None) => bail!("give --theta0 or --interval"),
            };
            RunConfig::Evalue(EvalueConfig {
                input: a.input.source()?,
                param: a.param,
                null,
                reference: a.reference,
                dims: a.dims,
                d0: a.d0,
                outputs: outputs(&a.outputs, None),
            })
        }
    })
}

fn print_summary(doc: &ReportDocument, digits: usize) {
    let d = |v: f64| report::display(v, digits);
    for e in &doc.evalues {
        let ev = &e.evalue;
        eprintln!(
            "{}: ev_against {}  ev_support {}  sev_against {}  ev0 {}",
            e.parameter,
            d(ev.ev_against),
            d(ev.ev_support),
            d(ev.sev_against),
            d(ev.ev0)
        );
    }
    if let Some(bf) = &doc.bayes_factor {
        eprintln!("BF01 {}  BF10 {}", d(bf.bf01), d(bf.bf10));
    }
    if let Some(cc) = &doc.cross_check {
        eprintln!(
            "cross-check {}: grid {}  mcmc {}  kde {}  KS {}",
            cc.parameter,
            d(cc.ev_against_grid),
            d(cc.ev_against_mcmc),
            d(cc.ev_against_kde),
            d(cc.ks_distance)
        );
    }
    if let Some(err) = &doc.error {
        eprintln!("error ({}): {}", err.kind, err.message);
    }
}

fn verify(path: &PathBuf) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let original: serde_json::Value = serde_json::from_str(&text).context("parsing report")?;
    let doc: ReportDocument = serde_json::from_value(original.clone()).context("report does not match the schema")?;
    if doc.schema_version != report::SCHEMA_VERSION {
        bail!("report schema version {} is not supported", doc.schema_version);
    }
    let rerun = run::run(&doc.config, false);
    let fresh: serde_json::Value = serde_json::from_str(&rerun.report.to_json()).expect("own output parses");
    let diffs = report::differences(&original, &fresh);
    if diffs.is_empty() {
        eprintln!("verified {}: no differences", path.display());
        Ok(0)
    } else {
        eprintln!(
            "{} differs from a fresh run at {} field(s):",
            path.display(),
            diffs.len()
        );
        for d in &diffs {
            eprintln!("  {d}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match (cli.verify, cli.command) {
        (Some(path), _) => verify(&path).unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            EXIT_VALIDATION
        }),
        (None, Some(command)) => match build_config(command) {
            Ok(config) => {
                let outcome = run::run(&config, true);
                let mut stdout = io::stdout().lock();
                if let Some(text) = &outcome.stdout {
                    let _ = stdout.write_all(text.as_bytes());
                } else if config.outputs().report.is_none() && !matches!(config, RunConfig::Simulate(_)) {
                    let _ = stdout.write_all(outcome.report.to_json().as_bytes());
                }
                print_summary(&outcome.report, cli.digits);
                outcome.exit_code
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_VALIDATION
            }
        },
        (None, None) => {
            eprintln!("error: a subcommand or --verify is required (see --help)");
            EXIT_VALIDATION
        }
    };
    ExitCode::from(code as u8)
}
