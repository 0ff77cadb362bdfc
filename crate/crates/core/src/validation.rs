//! Self-contained validation battery: the ten synthetic checks that the
//! `validate` command runs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::boundary::{
    auto_window, budget_bracket, classify_regime, find_crossing, geometric_grid, grid_cell,
    local_optimality_check, polish_crossing, theoretical_boundary_spec, CrossingEstimate,
    CrossingStatus, RegimeReport,
};
use crate::error::{Error, Result};
use crate::fits::{fit_loglog, fit_variance_exponent_model, predict_slope};
use crate::models::{
    DeterministicLimitBinary, LinearBiasBinary, MonomialBalanceModel, NoiseObservableModel,
    ProductContractionString,
};
use crate::mse::{exact_curve, exact_delta, exact_delta_integerized, mc_delta, mc_sweep, mean_sd};
use crate::resample::{bootstrap_pipeline, BootstrapResult, BootstrapSpec, Statistic};
use crate::rules::{build_rule, variance_penalty, Allocation, RuleSpec};

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "rule identities"),
    (2, "penalty closed form"),
    (3, "subcritical root law"),
    (4, "critical threshold"),
    (5, "exact analytic crossings"),
    (6, "q_hat to predicted slope"),
    (7, "allocation invariance"),
    (8, "local optimality and bracketing"),
    (9, "rate law"),
    (10, "Monte Carlo and bootstrap soundness"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed_s
        )
    }
}

/// Runs the selected criteria (all when `ids` is empty), in order.
pub fn run_battery(ids: &[u32]) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .filter(|(id, _)| ids.is_empty() || ids.contains(id))
        .map(|&(id, name)| run_criterion(id, name))
        .collect()
}

fn run_criterion(id: u32, name: &str) -> CriterionOutcome {
    let start = Instant::now();
    let result = match id {
        1 => rule_identities(),
        2 => penalty_closed_form(),
        3 => subcritical_root_law(),
        4 => critical_threshold(),
        5 => exact_crossings(),
        6 => slope_chain(),
        7 => allocation_invariance(),
        8 => optimality_and_bracketing(),
        9 => rate_law(),
        10 => mc_soundness(),
        _ => Err(Error::invalid(format!("unknown criterion {id}"))),
    };
    let (passed, detail) = match result {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionOutcome {
        id,
        name: name.to_string(),
        passed,
        detail,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

type Check = Result<(bool, String)>;

fn rule_identities() -> Check {
    let sets: [&[f64]; 5] = [&[1.0, 2.0], &[1.0, 3.0], &[1.0, 5.0], &[1.0, 3.0, 5.0], &[1.0, 2.0, 3.0, 4.0]];
    let mut worst = 0.0f64;
    let mut nontrivial = true;
    for s in sets {
        let r = build_rule(s, Allocation::Uniform)?;
        worst = r.identity_residuals().into_iter().fold(worst, f64::max);
        nontrivial &= r.abs_coeff_sum() > 1.0;
    }
    Ok((
        worst <= 1e-12 && nontrivial,
        format!("max residual {worst:.2e}, sum|c| > 1: {nontrivial}"),
    ))
}

fn penalty_closed_form() -> Check {
    let r = build_rule::<f64>(&[1.0, 3.0], Allocation::Uniform)?;
    let mut worst = 0.0f64;
    for q in [0.0, 0.5, 1.0, 2.0] {
        for nu in [1.0, 2.0, 0.75] {
            let k = variance_penalty(&r, q, nu).k_fixed;
            let closed = nu * (3.5 + 3f64.powf(q) / 2.0);
            worst = worst.max((k - closed).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut violations = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4usize);
        let mut scales = vec![1.0];
        for _ in 0..k {
            let last = *scales.last().unwrap();
            scales.push(last + rng.random_range(0.25..2.5));
        }
        let weights: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let alloc = weights.iter().map(|w| w / total).collect();
        let rule = build_rule(&scales, Allocation::Explicit(alloc))?;
        let q = rng.random_range(0.0..3.0);
        let nu = rng.random_range(0.1..2.0);
        let pc = variance_penalty(&rule, q, nu);
        if pc.k_opt > pc.k_fixed * (1.0 + 1e-12) || !(pc.k_opt > 0.0) {
            violations += 1;
        }
    }
    Ok((
        worst <= 1e-12 && violations == 0,
        format!("closed-form error {worst:.1e}, K_opt > K_fixed in {violations}/100 random rules"),
    ))
}

/// Crossings of exact delta curves on auto windows centred on the theory guess.
fn exact_crossings_on_window(
    model: &dyn NoiseObservableModel<f64>,
    spec: &RuleSpec<f64>,
    guess: &RegimeReport<f64>,
    budgets: &[f64],
    window: (f64, f64),
    ppd: u32,
) -> Result<(Vec<CrossingEstimate<f64>>, f64)> {
    let mut out = Vec::with_capacity(budgets.len());
    let mut cell = 0.0f64;
    for &b in budgets {
        let grid = auto_window(guess, b, window.0, window.1, ppd)?;
        cell = cell.max(grid_cell(&grid));
        let curve = exact_curve(model, Some(spec), b, &grid)?;
        out.push(find_crossing(&curve.points)?);
    }
    Ok((out, cell))
}

fn decades(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

fn subcritical_root_law() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let budgets = decades(3, 6);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [1u32, 2] {
        for q in [0.0, 1.0] {
            let m = MonomialBalanceModel::<f64>::new(p, q, 2.0, 3.0)?;
            let regime = theoretical_boundary_spec(&m, &spec)?;
            let (xs, _) = exact_crossings_on_window(&m, &spec, &regime, &budgets, (0.5, 2.0), 200)?;
            let fit = fit_loglog(&xs)?;
            let target = regime.exponent.unwrap();
            let c = regime.c_pq.unwrap();
            let c_err = (fit.c_fit() / c - 1.0).abs();
            ok &= (fit.slope - target).abs() <= 0.01 && c_err <= 0.01;
            parts.push(format!("p={p},q={q}: s={:.4} (target {target:.4}), C rel err {c_err:.1e}", fit.slope));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn critical_threshold() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let m = MonomialBalanceModel::<f64>::new(1, 2.0, 1.0, 20000.0)?;
    let regime = classify_regime::<f64>(1, 2.0, 1.0, 20000.0, None)?;
    let b_star = regime.b_star.unwrap_or(f64::NAN);
    let grid = geometric_grid(1e-6, 1e-2, 10)?;
    let below = 20000.0 * (1.0 - 1e-9);
    let above = 20000.0 * (1.0 + 1e-9);
    let signs_ok = grid.iter().all(|&e| {
        matches!((m.delta(e, below), m.delta(e, above)), (Ok(a), Ok(b)) if a < 0.0 && b > 0.0)
    });
    let mut statuses_ok = true;
    for b in [2e3, 1e4, 19_999.0] {
        let c = find_crossing(&exact_curve(&m, Some(&spec), b, &grid)?.points)?;
        statuses_ok &= c.status == CrossingStatus::NoCrossingInWindow;
    }
    for b in [20_001.0, 1e5, 1e6] {
        let c = find_crossing(&exact_curve(&m, Some(&spec), b, &grid)?.points)?;
        statuses_ok &= c.status == CrossingStatus::NoNegativeRegion;
    }
    let sup = MonomialBalanceModel::<f64>::new(1, 3.0, 1.0, 1.0)?;
    let mut censored = 0;
    let budgets = decades(2, 7);
    for &b in &budgets {
        let c = find_crossing(&exact_curve(&sup, Some(&spec), b, &grid)?.points)?;
        censored += usize::from(!c.is_crossed());
    }
    let ok = b_star == 20000.0 && signs_ok && statuses_ok && censored == budgets.len();
    Ok((
        ok,
        format!(
            "B* = {b_star}, sign flip at B*(1 +/- 1e-9): {signs_ok}, statuses: {statuses_ok}, supercritical censored {censored}/{}",
            budgets.len()
        ),
    ))
}

fn exact_crossings() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let det = DeterministicLimitBinary::<f64>::new(1.0)?;
    let regime = theoretical_boundary_spec(&det, &spec)?;
    let budgets = decades(3, 7);
    let (xs, cell) = exact_crossings_on_window(&det, &spec, &regime, &budgets, (0.2, 5.0), 40)?;
    let worst = xs
        .iter()
        .map(|c| match c.eps_star {
            Some(e) => (e / (10.0 / (c.budget + 8.0)) - 1.0).abs(),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    let s_det = fit_loglog(&xs)?.slope;

    let lin = LinearBiasBinary::<f64>::new(0.5, 1.0)?;
    let lregime = theoretical_boundary_spec(&lin, &spec)?;
    let (lxs, _) = exact_crossings_on_window(&lin, &spec, &lregime, &decades(4, 7), (0.2, 5.0), 40)?;
    let lfit = fit_loglog(&lxs)?;
    let c_err = (lfit.c_fit() / 3f64.sqrt() - 1.0).abs();
    let ok = worst <= cell
        && (-1.02..=-0.98).contains(&s_det)
        && (-0.52..=-0.48).contains(&lfit.slope)
        && c_err <= 0.10;
    Ok((
        ok,
        format!(
            "max rel err vs 10/(B+8) {worst:.2e} (cell {cell:.3}), slope {s_det:.4}; linear slope {:.4}, C_fit {:.4} (rel err {c_err:.3})",
            lfit.slope,
            lfit.c_fit()
        ),
    ))
}

fn slope_chain() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let window = (1e-4, 1e-3);
    let pcs = ProductContractionString::<f64>::new(0.1, 5)?;
    let lin = LinearBiasBinary::<f64>::new(0.5, 1.0)?;
    let q_pcs = fit_variance_exponent_model(&pcs, window, 20)?.q_hat;
    let q_lin = fit_variance_exponent_model(&lin, window, 20)?.q_hat;

    let mut ok = (0.98..=1.0).contains(&q_pcs) && q_lin.abs() <= 0.01;
    let mut parts = vec![format!("q_hat {q_pcs:.5} / {q_lin:.5}")];
    let cases: [(&dyn NoiseObservableModel<f64>, f64, Vec<f64>); 2] =
        [(&pcs, q_pcs, decades(4, 7)), (&lin, q_lin, decades(4, 7))];
    for (model, q, budgets) in cases {
        let regime = theoretical_boundary_spec(model, &spec)?;
        let (xs, _) = exact_crossings_on_window(model, &spec, &regime, &budgets, (0.2, 5.0), 40)?;
        let s_obs = fit_loglog(&xs)?.slope;
        let s_pred = predict_slope(q)?;
        ok &= (s_obs - s_pred).abs() <= 0.03;
        parts.push(format!("{}: s_obs {s_obs:.4} vs s_pred {s_pred:.4}", model.name()));
    }
    Ok((ok, parts.join("; ")))
}

fn allocation_invariance() -> Check {
    let uniform = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let optimal = RuleSpec::<f64>::optimal(&[1.0, 3.0])?;
    let det = DeterministicLimitBinary::<f64>::new(1.0)?;
    let lin = LinearBiasBinary::<f64>::new(0.5, 1.0)?;
    let cases: [(&dyn NoiseObservableModel<f64>, Vec<f64>); 2] =
        [(&det, decades(3, 7)), (&lin, decades(4, 7))];
    let mut ok = true;
    let mut parts = Vec::new();
    for (model, budgets) in cases {
        let mut fits = Vec::new();
        for spec in [&uniform, &optimal] {
            let regime = theoretical_boundary_spec(model, spec)?;
            let (xs, _) = exact_crossings_on_window(model, spec, &regime, &budgets, (0.2, 5.0), 40)?;
            fits.push((fit_loglog(&xs)?, regime.k_q));
        }
        let ds = (fits[0].0.slope - fits[1].0.slope).abs();
        let k_lower = fits[1].1 < fits[0].1;
        let c_lower = fits[1].0.c_fit() < fits[0].0.c_fit();
        ok &= ds <= 0.02 && k_lower && c_lower;
        parts.push(format!(
            "{}: |ds| {ds:.4}, C_fit {:.4} -> {:.4}",
            model.name(),
            fits[0].0.c_fit(),
            fits[1].0.c_fit()
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// Monomial delta with signed remainders.
fn signed_monomial(eps: f64, b: f64, lb: f64, lv: f64) -> f64 {
    eps * eps - 1.0 / b + lb * eps.powi(3) + lv * eps / b
}

fn optimality_and_bracketing() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let det = DeterministicLimitBinary::<f64>::new(1.0)?;
    let lin = LinearBiasBinary::<f64>::new(0.5, 1.0)?;
    let pcs = ProductContractionString::<f64>::new(0.1, 5)?;
    let ladder: Vec<f64> = (6..=16).map(|i| 10f64.powf(i as f64 / 2.0)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    let models: [&dyn NoiseObservableModel<f64>; 3] = [&det, &lin, &pcs];
    for model in models {
        let regime = theoretical_boundary_spec(model, &spec)?;
        let s = regime.rate().unwrap() + 0.1;
        let check = local_optimality_check(&regime, s, &ladder, |e, b| {
            Ok(exact_delta(model, Some(&spec), e, b)?.delta)
        })?;
        let all_negative = check.deltas.iter().all(|&d| d < 0.0);
        ok &= all_negative;
        parts.push(format!("{} all negative: {all_negative}", model.name()));
    }

    let regime = classify_regime::<f64>(1, 0.0, 1.0, 1.0, None)?;
    let br = budget_bracket(&regime, 0.5, 1.0, 1.0, 1.0, 1.0, 0.1)?;
    let mut opposite = true;
    for k in 0..=30 {
        let b = br.b0 * 10f64.powf(k as f64 / 5.0);
        for (lb, lv) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let lo = signed_monomial(br.eps_lo(b), b, lb, lv);
            let hi = signed_monomial(br.eps_hi(b), b, lb, lv);
            opposite &= lo < 0.0 && hi > 0.0;
        }
    }
    ok &= opposite;
    parts.push(format!("bracket B0 {:.1}, opposite signs beyond B0: {opposite}", br.b0));
    Ok((ok, parts.join("; ")))
}

fn rate_law() -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let m = MonomialBalanceModel::<f64>::new(1, 0.0, 1.0, 1.0)?.with_remainders(1.0, 1.0, 1.0, 1.0)?;
    let regime = theoretical_boundary_spec(&m, &spec)?;
    let eta = regime.eta.unwrap();
    let mut pts = Vec::new();
    for i in 0..=12 {
        let b = 10f64.powf(3.0 + i as f64 / 2.0);
        let grid = auto_window(&regime, b, 0.5, 2.0, 50)?;
        let c = find_crossing(&exact_curve(&m, Some(&spec), b, &grid)?.points)?;
        let (lo, hi) = match (c.bracket_lo, c.bracket_hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Ok((false, format!("no crossing at B = {b:.0e}"))),
        };
        let root = polish_crossing(|e| m.delta(e, b), lo, hi, 1e-15)?;
        let err = (root / regime.predicted_crossing(b).unwrap() - 1.0).abs();
        pts.push((b, err));
    }
    let fit = crate::fits::fit_loglog_points(&pts)?;
    let rel = (-fit.slope - eta).abs() / eta;
    Ok((rel <= 0.15, format!("fitted rate {:.4} vs eta {eta} (rel diff {rel:.3})", -fit.slope)))
}

/// Monte Carlo settings of the soundness check.
pub struct McSettings {
    pub unbiased_runs: usize,
    pub unbiased_replicates: u32,
    pub datasets: usize,
    pub replicates: u32,
    pub n_rep: usize,
    pub budgets: Vec<u64>,
    pub window: (f64, f64),
    pub points: usize,
    pub spot_checks: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            unbiased_runs: 200,
            unbiased_replicates: 50,
            datasets: 100,
            replicates: 100,
            n_rep: 200,
            budgets: vec![1_000, 10_000, 100_000, 1_000_000],
            window: (0.25, 6.0),
            points: 8,
            spot_checks: 12,
        }
    }
}

/// `eps` grids for a deterministic-limit sweep: `points` geometric points on
/// `window * 10/B`, the same relative grid at every budget.
pub fn coverage_grids(budgets: &[u64], window: (f64, f64), points: usize) -> Vec<Vec<f64>> {
    let ratio = (window.1 / window.0).powf(1.0 / (points - 1) as f64);
    budgets
        .iter()
        .map(|&b| {
            (0..points)
                .map(|i| window.0 * ratio.powi(i as i32) * 10.0 / b as f64)
                .collect()
        })
        .collect()
}

fn slope_interval(
    model: &DeterministicLimitBinary<f64>,
    spec: &RuleSpec<f64>,
    s: &McSettings,
    grids: &[Vec<f64>],
    seed: u64,
) -> Result<BootstrapResult> {
    let (_, table) = mc_sweep(model, spec, &s.budgets, grids, s.replicates, seed)?;
    let bs = BootstrapSpec::new(s.n_rep, seed ^ 0xb007_57a9, vec![Statistic::SObs]);
    Ok(bootstrap_pipeline(&table, &bs)?.results.remove(0))
}

fn mc_soundness() -> Check {
    mc_soundness_with(&McSettings::default())
}

pub fn mc_soundness_with(s: &McSettings) -> Check {
    let spec = RuleSpec::<f64>::uniform(&[1.0, 3.0])?;
    let det = DeterministicLimitBinary::<f64>::new(1.0)?;

    // Unbiasedness against the exact delta for the same integerized shots.
    let (eps, b) = (0.02, 1000u64);
    let exact = exact_delta_integerized(&det, &spec, eps, b)?.delta;
    let mut errs = Vec::with_capacity(s.unbiased_runs);
    let mut se2 = 0.0;
    for i in 0..s.unbiased_runs {
        let (pt, _) = mc_delta(&det, &spec, eps, b, s.unbiased_replicates, 0x00b1_a500 + i as u64)?;
        errs.push(pt.delta - exact);
        se2 += pt.std_err.unwrap().powi(2);
    }
    // One pooled scale for every run: per-run standard errors are correlated
    // with the skewed per-run means.
    let pooled = (se2 / s.unbiased_runs as f64).sqrt();
    let z: Vec<f64> = errs.iter().map(|e| e / pooled).collect();
    let (mz, sz) = mean_sd(&z);
    let n = z.len() as f64;
    let t = mz / (sz / n.sqrt());
    let crit = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.995);
    let unbiased = t.abs() < crit;

    // Determinism.
    let grids = coverage_grids(&s.budgets, s.window, s.points);
    let (_, table) = mc_sweep(&det, &spec, &s.budgets, &grids, s.replicates, 7)?;
    let bs = BootstrapSpec::new(s.n_rep.max(100), 99, vec![Statistic::SObs, Statistic::CFit]);
    let deterministic = bootstrap_pipeline(&table, &bs)? == bootstrap_pipeline(&table, &bs)?;

    // Coverage of the asymptotic slope.
    let mut covered = 0;
    let mut points = Vec::with_capacity(s.datasets);
    for d in 0..s.datasets {
        let ci = slope_interval(&det, &spec, s, &grids, 0xc0_0000 + d as u64)?;
        covered += usize::from(ci.contains(-1.0));
        points.extend(ci.point);
    }
    let needed = (s.datasets * 85).div_ceil(100);

    // Spot check: bootstrap intervals from fresh datasets against the spread
    // of s_obs over independent Monte Carlo repetitions.
    points.sort_by(f64::total_cmp);
    let mc_interval = BootstrapResult {
        statistic: "s_obs".into(),
        point: None,
        ci_lo: Some(crate::resample::quantile_sorted(&points, 0.025)),
        ci_hi: Some(crate::resample::quantile_sorted(&points, 0.975)),
        n_rep: points.len(),
        level: 0.95,
        missing_fraction: 0.0,
    };
    let mut overlapping = 0;
    for k in 0..s.spot_checks {
        let ci = slope_interval(&det, &spec, s, &grids, 0x5907_0000 + k as u64)?;
        overlapping += usize::from(ci.overlaps(&mc_interval));
    }

    let ok = unbiased && deterministic && covered >= needed && overlapping == s.spot_checks;
    Ok((
        ok,
        format!(
            "t = {t:.3} (|t| < {crit:.3}), deterministic: {deterministic}, coverage {covered}/{} (need {needed}), overlap {overlapping}/{} with MC interval [{:.4}, {:.4}]",
            s.datasets,
            s.spot_checks,
            mc_interval.ci_lo.unwrap_or(f64::NAN),
            mc_interval.ci_hi.unwrap_or(f64::NAN)
        ),
    ))
}
