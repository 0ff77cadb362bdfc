//! Shot-budget planner: regime, boundary, bracket and verdict from model constants.

use clap::Args;
use helpharm::boundary::{bias_improvement, BudgetBracket};
use helpharm::{
    budget_bracket, build_rule, classify_regime, leading_optimal_allocation, variance_penalty,
    Allocation, Regime, Report,
};
use serde::Serialize;

use crate::config::parse_list;
use crate::CliError;

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Leading bias order.
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Leading bias coefficient `A_p` in `mu(eps) - mu(0) ~ A_p eps^p`.
    #[arg(long, conflicts_with = "kappa", allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Leakage rate, equivalent to `A_p = -kappa`.
    #[arg(long)]
    kappa: Option<f64>,
    /// Variance level `nu` in `v(eps) ~ nu eps^q`.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    q: f64,
    /// Squared-bias improvement constant, bypassing `alpha` and the rule.
    #[arg(long)]
    d: Option<f64>,
    /// Variance penalty constant, bypassing `nu` and the rule.
    #[arg(long)]
    k: Option<f64>,
    /// Comma-separated scales.
    #[arg(long, default_value = "1,3")]
    rule: String,
    /// `uniform` or `optimal`.
    #[arg(long, default_value = "uniform")]
    alloc: String,
    /// Shot budget.
    #[arg(long)]
    budget: Option<f64>,
    /// Noise level for a help/harm verdict.
    #[arg(long)]
    eps: Option<f64>,
    /// Bracket half-width in (0, 1).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    l_b: Option<f64>,
    #[arg(long)]
    l_v: Option<f64>,
    #[arg(long)]
    delta_b: Option<f64>,
    #[arg(long)]
    delta_v: Option<f64>,
    /// Upper end of the noise range where the remainder bounds hold.
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Serialize)]
struct Plan {
    regime: Report,
    verdict: String,
    budget: Option<f64>,
    eps_star: Option<f64>,
    above_threshold: Option<bool>,
    eps: Option<f64>,
    delta_leading: Option<f64>,
    helps: Option<bool>,
    bracket: Option<BudgetBracket<f64>>,
    eps_lo: Option<f64>,
    eps_hi: Option<f64>,
    optimal_fractions: Option<Vec<f64>>,
}

fn constants(a: &PlanArgs) -> Result<(f64, f64, Option<Vec<f64>>), CliError> {
    let optimal = match a.alloc.as_str() {
        "uniform" => false,
        "optimal" => true,
        other => return Err(CliError::Config(format!("unknown allocation '{other}'"))),
    };
    let rule = build_rule(&parse_list(&a.rule)?, Allocation::Uniform)?;
    let fractions = leading_optimal_allocation(&rule, a.q).ok();
    let d = match a.d {
        Some(d) => d,
        None => {
            let a_p = a.alpha.or(a.kappa.map(|k| -k)).ok_or_else(|| {
                CliError::Config("plan needs --alpha, --kappa or --d".into())
            })?;
            bias_improvement(&rule, a.p, a_p)?
        }
    };
    let k = match a.k {
        Some(k) => k,
        None => {
            let nu = a
                .nu
                .ok_or_else(|| CliError::Config("plan needs --nu or --k".into()))?;
            let pen = variance_penalty(&rule, a.q, nu);
            if optimal {
                pen.k_opt
            } else {
                pen.k_fixed
            }
        }
    };
    Ok((d, k, fractions))
}

fn plan(a: &PlanArgs) -> Result<Plan, CliError> {
    if !(a.q >= 0.0) {
        return Err(CliError::Config("q must be >= 0".into()));
    }
    let (d, k, fractions) = constants(a)?;
    let remainders = a.delta_b.zip(a.delta_v);
    let regime = classify_regime(a.p, a.q, d, k, remainders)?;
    let eps_star = a.budget.and_then(|b| regime.predicted_crossing(b));
    let above_threshold = match (regime.regime, regime.b_star, a.budget) {
        (Regime::Critical, Some(bs), Some(b)) => Some(b > bs),
        _ => None,
    };
    let delta_leading = match (a.eps, a.budget) {
        (Some(e), Some(b)) => Some(d * e.powi(2 * a.p as i32) - k * e.powf(a.q) / b),
        _ => None,
    };
    let bracket = match (a.rho, regime.regime) {
        (Some(rho), Regime::Subcritical) => Some(budget_bracket(
            &regime,
            rho,
            a.l_b.unwrap_or(0.0),
            a.l_v.unwrap_or(0.0),
            a.delta_b.unwrap_or(1.0),
            a.delta_v.unwrap_or(1.0),
            a.eps0.unwrap_or(f64::INFINITY),
        )?),
        _ => None,
    };
    let (eps_lo, eps_hi) = match (&bracket, a.budget) {
        (Some(br), Some(b)) => (Some(br.eps_lo(b)), Some(br.eps_hi(b))),
        _ => (None, None),
    };
    Ok(Plan {
        verdict: regime.verdict(),
        regime,
        budget: a.budget,
        eps_star,
        above_threshold,
        eps: a.eps,
        delta_leading,
        helps: delta_leading.map(|x| x > 0.0),
        bracket,
        eps_lo,
        eps_hi,
        optimal_fractions: fractions,
    })
}

pub fn run(a: &PlanArgs) -> Result<(), CliError> {
    let p = plan(a)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&p).expect("serializes"));
        return Ok(());
    }
    let r = &p.regime;
    let regime = match r.regime {
        Regime::Subcritical => "subcritical",
        Regime::Critical => "critical",
        Regime::Supercritical => "supercritical",
    };
    println!("regime        {regime} (p={}, q={}, D={}, K={})", r.p, r.q, r.d_p, r.k_q);
    println!("verdict       {}", p.verdict);
    if let (Some(c), Some(s)) = (r.c_pq, r.exponent) {
        println!("boundary      eps*(B) = {c} B^({s})");
    }
    if let (Some(b), Some(e)) = (p.budget, p.eps_star) {
        println!("eps*(B={b})   {e}");
    }
    if let (Some(b), Some(above)) = (p.budget, p.above_threshold) {
        let word = if above { "above" } else { "at or below" };
        println!("budget        B={b} is {word} the threshold {}", r.b_star.unwrap_or(f64::NAN));
    }
    if let (Some(e), Some(x), Some(h)) = (p.eps, p.delta_leading, p.helps) {
        let word = if h { "helps" } else { "harms" };
        println!("at eps={e}    leading delta {x:.6e}: ZNE {word}");
    }
    if let Some(br) = &p.bracket {
        println!("bracket       rho={} x-={} x+={} margin={} B0={}", br.rho, br.x_minus, br.x_plus, br.m_rho, br.b0);
        if let (Some(lo), Some(hi)) = (p.eps_lo, p.eps_hi) {
            println!("eps bracket   [{lo}, {hi}]");
        }
    }
    if let Some(f) = &p.optimal_fractions {
        let f: Vec<String> = f.iter().map(|x| format!("{x:.6}")).collect();
        println!("optimal pi    {}", f.join(" "));
    }
    Ok(())
}
