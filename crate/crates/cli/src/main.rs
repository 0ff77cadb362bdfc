use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod plan;

use config::{parse_list, EngineKind, Overrides};

/// Finite-shot help-harm boundaries for fixed Richardson zero-noise extrapolation.
#[derive(Debug, Parser)]
#[command(name = "helpharm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a rule's coefficients, identity residuals and variance penalties.
    Rule(RuleArgs),
    /// Tabulate delta = MSE_noisy - MSE_zne over the grid (CSV).
    Sweep(RunArgs),
    /// Locate the first help-harm crossing at each budget (CSV).
    Boundary(RunArgs),
    /// Fit the boundary law and diagnostics; write the JSON report.
    Fit(FitArgs),
    /// Run the synthetic validation battery.
    Validate(ValidateArgs),
    /// Predict the boundary and verdict for given model constants.
    Plan(plan::PlanArgs),
}

#[derive(Debug, Args)]
struct RuleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scales, e.g. `1,3`.
    #[arg(long)]
    scales: Option<String>,
    /// `uniform`, `optimal` or comma-separated fractions.
    #[arg(long)]
    alloc: Option<String>,
    /// Variance exponents at which to report penalties.
    #[arg(long, default_value = "0,1")]
    q: String,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scales or `none`.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    alloc: Option<String>,
    /// Comma-separated shot budgets.
    #[arg(long)]
    budgets: Option<String>,
    /// Comma-separated noise levels (explicit grid for every budget).
    #[arg(long)]
    eps: Option<String>,
    #[arg(long, value_parser = parse_engine)]
    engine: Option<EngineKind>,
    #[arg(long)]
    replicates: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates.
    #[arg(long)]
    n_rep: Option<usize>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Crossing table to fit instead of computing one from the configuration.
    #[arg(long)]
    crossings: Option<PathBuf>,
    /// Raw count table for the variance/bias fits and the bootstrap.
    #[arg(long)]
    counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Comma-separated criterion ids; all when absent.
    #[arg(long)]
    criteria: Option<String>,
    /// Print machine-readable JSON instead of one line per criterion.
    #[arg(long)]
    json: bool,
    /// Also write the JSON results to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<EngineKind, String> {
    match s {
        "exact" => Ok(EngineKind::Exact),
        "monte_carlo" | "mc" => Ok(EngineKind::MonteCarlo),
        other => Err(format!("unknown engine '{other}' (exact | monte_carlo)")),
    }
}

impl RunArgs {
    fn overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            rule: self.rule.clone(),
            alloc: self.alloc.clone(),
            budgets: self.budgets.as_deref().map(parse_list).transpose()?,
            eps: self.eps.as_deref().map(parse_list).transpose()?,
            engine: self.engine,
            replicates: self.replicates,
            seed: self.seed,
            n_rep: self.n_rep,
            out: self.out.clone(),
        })
    }

    fn config(&self) -> Result<config::Config, CliError> {
        let mut cfg = config::Config::load(self.config.as_deref())?;
        cfg.apply(&self.overrides()?)?;
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Domain(String),
    Validation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Domain(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Domain(m) => write!(f, "domain error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<helpharm::Error> for CliError {
    fn from(e: helpharm::Error) -> Self {
        use helpharm::Error as E;
        match e {
            E::InvalidRule(_) | E::IllConditioned { .. } | E::InvalidInput(_) | E::Io(_) | E::NoSampler => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("HELPHARM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("HELPHARM_THREADS='{v}' is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Rule(a) => commands::rule(&a),
        Command::Sweep(a) => commands::sweep(&a.config()?),
        Command::Boundary(a) => commands::boundary(&a.config()?),
        Command::Fit(a) => commands::fit(&a.run.config()?, a.crossings.as_deref(), a.counts.as_deref()),
        Command::Validate(a) => commands::validate(&a),
        Command::Plan(a) => plan::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("helpharm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
