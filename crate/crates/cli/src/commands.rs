use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use helpharm::fits::{fit_bias_model, fit_variance_exponent_model};
use helpharm::io::{
    read_counts_csv, read_crossings_csv, write_counts_csv, write_crossings_csv, write_delta_csv,
    Preamble, SCHEMA_VERSION,
};
use helpharm::mse::{exact_curve, mc_sweep};
use helpharm::resample::{analyze_counts, bootstrap_pipeline, BootstrapReport, BootstrapSpec};
use helpharm::validation::{run_battery, CriterionOutcome};
use helpharm::{
    constant_check, find_crossings, fit_loglog, predict_slope, theoretical_boundary_spec,
    variance_penalty, BiasFit, ConstantCheck, CountTable, Crossing, Curve, Fit, Model,
    Report, Spec, VarianceExponentFit,
};
use serde::Serialize;

use crate::config::{parse_list, Config, EngineKind};
use crate::{CliError, RuleArgs, ValidateArgs};

const DEFAULT_MC_REPLICATES: u32 = 100;
const DEFAULT_WINDOW_POINTS: usize = 20;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

struct Computed {
    model: Model,
    spec: Option<Spec>,
    curves: Vec<Curve>,
    table: Option<CountTable>,
}

fn compute(cfg: &Config) -> Result<Computed, CliError> {
    let model = cfg.model()?;
    let spec = cfg.rule_spec()?;
    let budgets = cfg.budgets()?;
    let grids = cfg.grids(&model, spec.as_ref(), &budgets)?;
    match cfg.engine.kind {
        EngineKind::Exact => {
            let curves = budgets
                .iter()
                .zip(&grids)
                .map(|(&b, g)| exact_curve(model.as_dyn(), spec.as_ref(), b, g))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Computed {
                model,
                spec,
                curves,
                table: None,
            })
        }
        EngineKind::MonteCarlo => {
            let rule = spec
                .as_ref()
                .ok_or_else(|| CliError::Config("monte_carlo needs a rule (not 'none')".into()))?;
            let seed = cfg.seed.master.expect("checked in Config::check");
            let replicates = cfg.engine.replicates.unwrap_or(DEFAULT_MC_REPLICATES);
            let (curves, mut table) =
                mc_sweep(model.as_dyn(), rule, &cfg.shot_budgets()?, &grids, replicates, seed)?;
            table.header.model = Some(serde_json::to_value(model).expect("model serializes"));
            Ok(Computed {
                model,
                spec,
                curves,
                table: Some(table),
            })
        }
    }
}

fn preamble(cfg: &Config, kind: &str) -> Preamble {
    let engine = match cfg.engine.kind {
        EngineKind::Exact => "exact",
        EngineKind::MonteCarlo => "monte_carlo",
    };
    let mut pre = Preamble::new(kind)
        .flag("version", VERSION)
        .flag("engine", engine)
        .flag("config_hash", cfg.hash());
    for (k, v) in cfg.prereg_flags() {
        pre = pre.flag(k, v);
    }
    pre
}

/// Writes to `<dir>/<name>` when an output directory is configured, else to stdout
/// (only when `stdout` is set).
fn emit(
    cfg: &Config,
    name: &str,
    stdout: bool,
    write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match &cfg.output.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write(&mut w)?;
            w.flush()?;
        }
        None if stdout => {
            let mut w = io::stdout().lock();
            write(&mut w)?;
            w.flush()?;
        }
        None => {}
    }
    Ok(())
}

fn write_tables(cfg: &Config, run: &Computed, delta_to_stdout: bool) -> Result<(), CliError> {
    emit(cfg, "delta.csv", delta_to_stdout, |w| {
        Ok(write_delta_csv(w, &run.curves, &preamble(cfg, "delta"))?)
    })?;
    if let Some(table) = &run.table {
        emit(cfg, "counts.csv", false, |w| {
            Ok(write_counts_csv(w, table, &preamble(cfg, "counts"))?)
        })?;
    }
    Ok(())
}

pub fn sweep(cfg: &Config) -> Result<(), CliError> {
    let run = compute(cfg)?;
    write_tables(cfg, &run, true)
}

pub fn boundary(cfg: &Config) -> Result<(), CliError> {
    let run = compute(cfg)?;
    let crossings = find_crossings(&run.curves)?;
    write_tables(cfg, &run, false)?;
    emit(cfg, "crossings.csv", true, |w| {
        Ok(write_crossings_csv(w, &crossings, &preamble(cfg, "crossings"))?)
    })
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    schema_version: u32,
    version: &'static str,
    kind: &'static str,
    config_hash: String,
    preregistration: BTreeMap<&'static str, String>,
    config: &'a Config,
    regime: Option<Report>,
    boundary_fit: Fit,
    variance_fit: Option<VarianceExponentFit<f64>>,
    predicted_slope: Option<f64>,
    bias_fit: Option<BiasFit<f64>>,
    constant_check: Option<ConstantCheck<f64>>,
    bootstrap: Option<BootstrapReport>,
    crossings: Vec<Crossing>,
    notes: Vec<String>,
}

pub fn fit(cfg: &Config, crossings_path: Option<&Path>, counts_path: Option<&Path>) -> Result<(), CliError> {
    let mut notes = Vec::new();
    let mut table = match counts_path {
        Some(p) => Some(read_counts_csv(File::open(p)?)?.1),
        None => None,
    };
    let (crossings, model, spec) = match crossings_path {
        Some(p) => {
            let (_, c) = read_crossings_csv(File::open(p)?)?;
            (c, cfg.model, cfg.rule.as_ref().map(|_| cfg.rule_spec()).transpose()?.flatten())
        }
        None => {
            if cfg.model.is_none() {
                return Err(CliError::Config(
                    "fit needs --crossings or a [model] section to compute them".into(),
                ));
            }
            let run = compute(cfg)?;
            write_tables(cfg, &run, false)?;
            let c = find_crossings(&run.curves)?;
            emit(cfg, "crossings.csv", false, |w| {
                Ok(write_crossings_csv(w, &c, &preamble(cfg, "crossings"))?)
            })?;
            if table.is_none() {
                table = run.table;
            }
            (c, Some(run.model), run.spec)
        }
    };
    let boundary_fit = fit_loglog(&crossings)?;

    let windows = cfg.fit_windows();
    let points = cfg.windows.points.unwrap_or(DEFAULT_WINDOW_POINTS);
    let (mut variance_fit, mut bias_fit) = (None, None);
    if let Some(t) = &table {
        let est = analyze_counts(t, &windows)?;
        variance_fit = est.variance;
        bias_fit = est.bias;
    } else if let Some(m) = &model {
        if let Some(w) = windows.variance {
            match fit_variance_exponent_model(m.as_dyn(), w, points) {
                Ok(f) => variance_fit = Some(f),
                Err(e) => notes.push(format!("variance fit: {e}")),
            }
        }
        if let Some(w) = windows.bias {
            match fit_bias_model(m.as_dyn(), w, points, windows.bias_power) {
                Ok(f) => bias_fit = Some(f),
                Err(e) => notes.push(format!("bias fit: {e}")),
            }
        }
    }
    if windows.variance.is_some() && variance_fit.is_none() && notes.is_empty() {
        notes.push("variance fit: too few usable points in the window".into());
    }

    let predicted_slope = match &variance_fit {
        Some(v) => match predict_slope(v.q_hat) {
            Ok(s) => Some(s),
            Err(e) => {
                notes.push(format!("predicted slope: {e}"));
                None
            }
        },
        None => None,
    };

    let regime = match (&model, &spec) {
        (Some(m), Some(s)) => match theoretical_boundary_spec(m.as_dyn(), s) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("theory: {e}"));
                None
            }
        },
        _ => None,
    };

    let constant = match (&variance_fit, &bias_fit, &spec) {
        (Some(v), Some(b), Some(s)) if !s.is_optimal() => {
            match constant_check(&boundary_fit, v, b, s.base(), regime.and_then(|r| r.c_pq)) {
                Ok(c) => Some(c),
                Err(e) => {
                    notes.push(format!("constant check: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    let bootstrap = match (&cfg.bootstrap, &table) {
        (Some(_), Some(t)) => {
            let spec = BootstrapSpec::new(cfg.n_rep(), cfg.bootstrap_seed(), cfg.statistics()?)
                .with_windows(windows)
                .with_level(cfg.level());
            Some(bootstrap_pipeline(t, &spec)?)
        }
        (Some(_), None) => {
            notes.push("bootstrap: no count table available".into());
            None
        }
        _ => None,
    };

    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        version: VERSION,
        kind: "fit_report",
        config_hash: cfg.hash(),
        preregistration: cfg.prereg_flags().into_iter().collect(),
        config: cfg,
        regime,
        boundary_fit,
        variance_fit,
        predicted_slope,
        bias_fit,
        constant_check: constant,
        bootstrap,
        crossings,
        notes,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    emit(cfg, "report.json", true, |w| {
        writeln!(w, "{json}")?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct RuleReport {
    scales: Vec<f64>,
    coefficients: Vec<f64>,
    allocation: String,
    fractions: Vec<f64>,
    identity_residuals: Vec<f64>,
    condition: f64,
    abs_coeff_sum: f64,
    penalties: Vec<helpharm::Penalties>,
}

pub fn rule(args: &RuleArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args.config.as_deref())?;
    cfg.apply(&crate::config::Overrides {
        rule: args.scales.clone(),
        alloc: args.alloc.clone(),
        ..Default::default()
    })?;
    let spec = cfg
        .rule_spec()?
        .ok_or_else(|| CliError::Config("rule 'none' has no coefficients".into()))?;
    let base = spec.base();
    let label = match &spec.alloc {
        helpharm::AllocationMode::Uniform => "uniform".to_string(),
        helpharm::AllocationMode::Optimal => "optimal".to_string(),
        helpharm::AllocationMode::Explicit(_) => "explicit".to_string(),
    };
    let penalties = parse_list(&args.q)?
        .into_iter()
        .map(|q| variance_penalty(base, q, args.nu))
        .collect();
    let report = RuleReport {
        scales: base.scales().to_vec(),
        coefficients: base.coeffs().to_vec(),
        allocation: label,
        fractions: base.alloc().to_vec(),
        identity_residuals: base.identity_residuals(),
        condition: base.condition(),
        abs_coeff_sum: base.abs_coeff_sum(),
        penalties,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
        return Ok(());
    }
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    println!("scales        {}", join(&report.scales));
    println!("coefficients  {}", join(&report.coefficients));
    if spec.is_optimal() {
        println!("allocation    optimal (recomputed at each eps)");
    } else {
        println!("allocation    {} {}", report.allocation, join(&report.fractions));
    }
    let residuals: Vec<String> = report.identity_residuals.iter().map(|r| format!("{r:.3e}")).collect();
    println!("residuals     {}", residuals.join(" "));
    println!("condition     {:.3e}", report.condition);
    println!("sum |c|       {}", report.abs_coeff_sum);
    for k in &report.penalties {
        println!("q={} nu={}  K_fixed={}  K_opt={}", k.q, k.nu, k.k_fixed, k.k_opt);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ValidateReport<'a> {
    schema_version: u32,
    version: &'static str,
    kind: &'static str,
    passed: usize,
    total: usize,
    results: &'a [CriterionOutcome],
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let ids: Vec<u32> = match &args.criteria {
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|id| (1..=10).contains(id))
                    .ok_or_else(|| CliError::Config(format!("unknown criterion '{t}'")))
            })
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let results = run_battery(&ids);
    let passed = results.iter().filter(|r| r.passed).count();
    let report = ValidateReport {
        schema_version: SCHEMA_VERSION,
        version: VERSION,
        kind: "validation",
        passed,
        total: results.len(),
        results: &results,
    };
    let json = serde_json::to_string_pretty(&report).expect("serializes");
    if args.json {
        println!("{json}");
    } else {
        for r in &results {
            println!("{}", r.line());
        }
        println!("{passed}/{} criteria passed", results.len());
    }
    if let Some(p) = &args.report {
        std::fs::write(p, format!("{json}\n"))?;
    }
    if passed < results.len() {
        return Err(CliError::Validation(format!(
            "{} of {} criteria failed",
            results.len() - passed,
            results.len()
        )));
    }
    Ok(())
}
