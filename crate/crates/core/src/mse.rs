//! Exact and Monte Carlo MSE of the unmitigated and ZNE estimators.
//!
//! Squared errors are always measured against the model's true ideal value
//! `mu(0)`, so the Monte Carlo MSE is unbiased rather than plug-in.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{binomial, Declared, NoiseObservableModel};
use crate::rng::{cell_stream, CellKey};
use crate::rules::{scaled_mean, scaled_variance, AllocationMode, RichardsonRule, RuleSpec};
use crate::scalar::{compensated_sum, Real};

pub const COUNT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Noisy,
    Zne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown<T> {
    pub bias: T,
    pub bias_sq: T,
    pub variance: T,
    pub mse: T,
    pub estimator: Estimator,
}

impl<T: Real> MseBreakdown<T> {
    fn new(bias: T, variance: T, estimator: Estimator) -> Self {
        let bias_sq = bias * bias;
        Self {
            bias,
            bias_sq,
            variance,
            mse: bias_sq + variance,
            estimator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Exact,
    MonteCarlo,
}

/// One value of `delta(eps, B) = MSE_noisy - MSE_zne`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint<T> {
    pub eps: T,
    pub budget: T,
    pub delta: T,
    pub source: Source,
    pub std_err: Option<T>,
}

/// Delta values at one budget, sorted by `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCurve<T> {
    pub budget: T,
    pub points: Vec<DeltaPoint<T>>,
}

/// Exact MSE of the unmitigated estimator (`rule = None`) or of the ZNE
/// estimator with real-valued allocation `n_j = pi_j B`.
pub fn exact_mse<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: Option<&RichardsonRule<T>>,
    eps: T,
    budget: T,
) -> Result<MseBreakdown<T>> {
    if !(budget > T::zero()) {
        return Err(Error::invalid("budget must be positive"));
    }
    match rule {
        None => noisy_mse(model, eps, budget),
        Some(rule) => {
            let shots: Vec<T> = rule.alloc().iter().map(|&pi| pi * budget).collect();
            zne_mse_with_shots(model, rule, eps, &shots)
        }
    }
}

fn noisy_mse<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    eps: T,
    budget: T,
) -> Result<MseBreakdown<T>> {
    let bias = model.mean(eps)? - model.ideal_mean();
    let variance = model.variance(eps)? / budget;
    Ok(MseBreakdown::new(bias, variance, Estimator::Noisy))
}

/// ZNE MSE with explicit per-level shot counts (real or integerized).
pub fn zne_mse_with_shots<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RichardsonRule<T>,
    eps: T,
    shots: &[T],
) -> Result<MseBreakdown<T>> {
    if shots.len() != rule.scales().len() || shots.iter().any(|&n| !(n > T::zero())) {
        return Err(Error::invalid("need one positive shot count per level"));
    }
    let mut means = Vec::with_capacity(shots.len());
    let mut vars = Vec::with_capacity(shots.len());
    for ((&c, &l), &n) in rule.coeffs().iter().zip(rule.scales()).zip(shots) {
        means.push(c * scaled_mean(model, l, eps)?);
        vars.push(c * c * scaled_variance(model, l, eps)? / n);
    }
    let bias = compensated_sum(means) - model.ideal_mean();
    Ok(MseBreakdown::new(bias, compensated_sum(vars), Estimator::Zne))
}

/// Excess variance `A(eps) = sum_j c_j^2 v(l_j eps)/pi_j - v(eps)`, so that
/// `Var_zne - Var_noisy = A(eps)/B`.
pub fn excess_variance<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RichardsonRule<T>,
    eps: T,
) -> Result<T> {
    let mut terms = Vec::with_capacity(rule.scales().len() + 1);
    for ((&c, &l), &pi) in rule.coeffs().iter().zip(rule.scales()).zip(rule.alloc()) {
        terms.push(c * c * scaled_variance(model, l, eps)? / pi);
    }
    terms.push(-model.variance(eps)?);
    Ok(compensated_sum(terms))
}

/// Exact `delta(eps, B)`. `rule = None` compares the unmitigated estimator with
/// itself. Direct-balance models return their closed form.
pub fn exact_delta<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: Option<&RuleSpec<T>>,
    eps: T,
    budget: T,
) -> Result<DeltaPoint<T>> {
    let delta = match (model.as_monomial(), rule) {
        (_, None) => {
            model.check_domain(eps)?;
            if !(budget > T::zero()) {
                return Err(Error::invalid("budget must be positive"));
            }
            T::zero()
        }
        (Some(m), Some(_)) => m.delta(eps, budget)?,
        (None, Some(spec)) => {
            let rule = spec.at(model, eps)?;
            let noisy = exact_mse(model, None, eps, budget)?;
            let zne = exact_mse(model, Some(&rule), eps, budget)?;
            difference(noisy, zne)
        }
    };
    Ok(DeltaPoint {
        eps,
        budget,
        delta,
        source: Source::Exact,
        std_err: None,
    })
}

/// `(b_n^2 - b_z^2) + (V_n - V_z)` with the bias part factored to avoid
/// cancellation when both biases are small.
fn difference<T: Real>(noisy: MseBreakdown<T>, zne: MseBreakdown<T>) -> T {
    (noisy.bias - zne.bias) * (noisy.bias + zne.bias) + (noisy.variance - zne.variance)
}

/// Exact delta with the allocation integerized exactly as the Monte Carlo
/// engine does it.
pub fn exact_delta_integerized<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RuleSpec<T>,
    eps: T,
    budget: u64,
) -> Result<DeltaPoint<T>> {
    let r = rule.at(model, eps)?;
    let shots = integerize_allocation(r.alloc(), budget)?;
    let shots_t: Vec<T> = shots.iter().map(|&n| T::lit(n as f64)).collect();
    let b = T::lit(budget as f64);
    let noisy = exact_mse(model, None, eps, b)?;
    let zne = zne_mse_with_shots(model, &r, eps, &shots_t)?;
    Ok(DeltaPoint {
        eps,
        budget: b,
        delta: difference(noisy, zne),
        source: Source::Exact,
        std_err: None,
    })
}

/// Exact delta with a caller-supplied effective excess-variance penalty
/// `A(eps)` in place of the independent-sampling one (correlated sampling).
pub fn exact_delta_with_penalty<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RichardsonRule<T>,
    eps: T,
    budget: T,
    penalty: &dyn Fn(T) -> T,
) -> Result<DeltaPoint<T>> {
    let noisy = exact_mse(model, None, eps, budget)?;
    let zne = exact_mse(model, Some(rule), eps, budget)?;
    let delta = (noisy.bias - zne.bias) * (noisy.bias + zne.bias) - penalty(eps) / budget;
    Ok(DeltaPoint {
        eps,
        budget,
        delta,
        source: Source::Exact,
        std_err: None,
    })
}

/// Exact delta curve over an `eps` grid at one budget.
pub fn exact_curve<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: Option<&RuleSpec<T>>,
    budget: T,
    grid: &[T],
) -> Result<DeltaCurve<T>> {
    let points = grid
        .iter()
        .map(|&e| exact_delta(model, rule, e, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(DeltaCurve { budget, points })
}

/// Largest-remainder rounding of `pi_j B` with every level given at least one
/// shot; the result sums to `B` exactly.
pub fn integerize_allocation<T: Real>(alloc: &[T], budget: u64) -> Result<Vec<u64>> {
    let k1 = alloc.len();
    let b = budget as f64;
    let ideal: Vec<f64> = alloc.iter().map(|&p| p.as_f64() * b).collect();
    let mut shots: Vec<u64> = ideal.iter().map(|&x| x.floor() as u64).collect();
    let assigned: u64 = shots.iter().sum();
    let remaining = budget.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..k1).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (ideal[i] - ideal[i].floor(), ideal[j] - ideal[j].floor());
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().cycle().take(remaining as usize) {
        shots[i] += 1;
    }
    // Move single shots from the largest cells into empty ones.
    for i in 0..k1 {
        if shots[i] == 0 {
            let donor = (0..k1).max_by_key(|&j| (shots[j], std::cmp::Reverse(j))).unwrap();
            if shots[donor] <= 1 {
                return Err(Error::ZeroCell { budget, level: i });
            }
            shots[donor] -= 1;
            shots[i] = 1;
        }
    }
    Ok(shots)
}

/// One Monte Carlo cell of raw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCell {
    pub budget_idx: u32,
    pub eps_idx: u32,
    /// Index into the rule's scales, or [`CellKey::NOISY_ARM`].
    pub scale_idx: u32,
    pub rep_idx: u32,
    pub shots: u64,
    pub plus_count: u64,
}

impl CountCell {
    pub fn is_noisy(&self) -> bool {
        self.scale_idx == CellKey::NOISY_ARM
    }

    pub fn key(&self) -> CellKey {
        CellKey {
            budget_idx: self.budget_idx,
            eps_idx: self.eps_idx,
            scale_idx: self.scale_idx,
            rep_idx: self.rep_idx,
        }
    }
}

/// Everything needed to recompute estimators from counts without the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHeader {
    pub schema_version: u32,
    pub model_name: String,
    pub model: Option<serde_json::Value>,
    pub declared: Declared<f64>,
    pub ideal_mean: f64,
    pub scales: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub allocation: String,
    pub budgets: Vec<u64>,
    /// `eps` grid per budget.
    pub eps_grid: Vec<Vec<f64>>,
    pub replicates: u32,
    pub master_seed: u64,
}

/// Raw Monte Carlo counts, one row per (budget, eps, replicate, arm), ordered
/// lexicographically with the unmitigated arm first in each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub header: CountHeader,
    pub cells: Vec<CountCell>,
}

impl CountTable {
    /// Cells per (budget, eps, replicate) group: the unmitigated arm plus one per scale.
    pub fn group_len(&self) -> usize {
        self.header.scales.len() + 1
    }

    /// Checks shape, ordering and shot totals.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let g = self.group_len();
        if h.coeffs.len() != h.scales.len() || h.eps_grid.len() != h.budgets.len() {
            return Err(Error::invalid("count header shape mismatch"));
        }
        let expected: usize = h.eps_grid.iter().map(Vec::len).sum::<usize>() * h.replicates as usize * g;
        if self.cells.len() != expected {
            return Err(Error::invalid(format!(
                "count table has {} cells, header implies {expected}",
                self.cells.len()
            )));
        }
        let mut idx = 0;
        for (b, grid) in h.eps_grid.iter().enumerate() {
            for e in 0..grid.len() {
                for r in 0..h.replicates {
                    let group = &self.cells[idx..idx + g];
                    let mut zne_total = 0;
                    for (a, c) in group.iter().enumerate() {
                        let scale_idx = if a == 0 { CellKey::NOISY_ARM } else { a as u32 - 1 };
                        if (c.budget_idx, c.eps_idx, c.scale_idx, c.rep_idx)
                            != (b as u32, e as u32, scale_idx, r)
                        {
                            return Err(Error::invalid(format!("count table out of order at row {}", idx + a)));
                        }
                        if c.shots == 0 {
                            return Err(Error::invalid(format!("cell at row {} has zero shots", idx + a)));
                        }
                        if c.plus_count > c.shots {
                            return Err(Error::invalid(format!("cell at row {} has plus_count > shots", idx + a)));
                        }
                        if a > 0 {
                            zne_total += c.shots;
                        }
                    }
                    if group[0].shots != h.budgets[b] || zne_total != h.budgets[b] {
                        return Err(Error::invalid(format!(
                            "shots in group at row {idx} do not sum to the budget {}",
                            h.budgets[b]
                        )));
                    }
                    idx += g;
                }
            }
        }
        Ok(())
    }

    pub fn plus_counts(&self) -> Vec<u64> {
        self.cells.iter().map(|c| c.plus_count).collect()
    }

    /// Monte Carlo delta curves from the stored counts.
    pub fn deltas(&self) -> Vec<DeltaCurve<f64>> {
        self.deltas_with_counts(&self.plus_counts())
    }

    /// Monte Carlo delta curves with `plus` substituted for the stored counts
    /// (same cell order).
    pub fn deltas_with_counts(&self, plus: &[u64]) -> Vec<DeltaCurve<f64>> {
        let h = &self.header;
        let g = self.group_len();
        let reps = h.replicates as usize;
        let mut idx = 0;
        let mut curves = Vec::with_capacity(h.budgets.len());
        for (b, grid) in h.eps_grid.iter().enumerate() {
            let budget = h.budgets[b] as f64;
            let mut points = Vec::with_capacity(grid.len());
            for &eps in grid {
                let mut diffs = Vec::with_capacity(reps);
                for _ in 0..reps {
                    let group = &self.cells[idx..idx + g];
                    let counts = &plus[idx..idx + g];
                    let noisy = estimate(counts[0], group[0].shots);
                    let zne = compensated_sum(
                        h.coeffs
                            .iter()
                            .zip(&group[1..])
                            .zip(&counts[1..])
                            .map(|((&c, cell), &k)| c * estimate(k, cell.shots)),
                    );
                    let en = noisy - h.ideal_mean;
                    let ez = zne - h.ideal_mean;
                    diffs.push((en - ez) * (en + ez));
                    idx += g;
                }
                let (mean, sd) = mean_sd(&diffs);
                points.push(DeltaPoint {
                    eps,
                    budget,
                    delta: mean,
                    source: Source::MonteCarlo,
                    std_err: Some(sd / (reps as f64).sqrt()),
                });
            }
            curves.push(DeltaCurve { budget, points });
        }
        curves
    }

    /// Pooled unmitigated-arm estimates of `mu(eps)` and `v(eps)` per
    /// (budget, eps) cell, for the variance and bias regressions.
    pub fn noisy_summary_with_counts(&self, plus: &[u64]) -> Vec<CurveSample> {
        let h = &self.header;
        let g = self.group_len();
        let mut out = Vec::new();
        let mut idx = 0;
        for (b, grid) in h.eps_grid.iter().enumerate() {
            for &eps in grid {
                let (mut k, mut n) = (0u64, 0u64);
                for _ in 0..h.replicates {
                    k += plus[idx];
                    n += self.cells[idx].shots;
                    idx += g;
                }
                let p = k as f64 / n as f64;
                out.push(CurveSample {
                    budget_idx: b as u32,
                    eps,
                    mean: 2.0 * p - 1.0,
                    variance: 4.0 * p * (1.0 - p),
                    shots: n,
                });
            }
        }
        out
    }
}

/// Pooled unmitigated-arm estimate at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub budget_idx: u32,
    pub eps: f64,
    pub mean: f64,
    pub variance: f64,
    pub shots: u64,
}

#[inline]
fn estimate(plus: u64, shots: u64) -> f64 {
    2.0 * plus as f64 / shots as f64 - 1.0
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(xs.iter().map(|&x| (x - mean) * (x - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

fn allocation_label(spec: &RuleSpec<f64>) -> String {
    match &spec.alloc {
        AllocationMode::Uniform => "uniform".into(),
        AllocationMode::Optimal => "optimal".into(),
        AllocationMode::Explicit(f) => format!("{f:?}"),
    }
}

/// Monte Carlo delta over a grid of budgets and per-budget `eps` grids.
///
/// Each cell draws from its own stream derived from `master_seed` and the cell
/// labels; the table is identical for any thread count.
pub fn mc_sweep(
    model: &dyn NoiseObservableModel<f64>,
    rule: &RuleSpec<f64>,
    budgets: &[u64],
    grids: &[Vec<f64>],
    replicates: u32,
    master_seed: u64,
) -> Result<(Vec<DeltaCurve<f64>>, CountTable)> {
    if !model.is_binary() {
        return Err(Error::NoSampler);
    }
    if replicates < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 replicates"));
    }
    if budgets.len() != grids.len() {
        return Err(Error::invalid("one eps grid per budget required"));
    }
    let mut groups = Vec::new();
    for (b, (&budget, grid)) in budgets.iter().zip(grids).enumerate() {
        for (e, &eps) in grid.iter().enumerate() {
            let r = rule.at(model, eps)?;
            let shots = integerize_allocation(r.alloc(), budget)?;
            let mut probs = Vec::with_capacity(shots.len() + 1);
            probs.push(plus_probability(model.mean(eps)?));
            for &l in r.scales() {
                probs.push(plus_probability(scaled_mean(model, l, eps)?));
            }
            groups.push((b as u32, e as u32, budget, shots, probs));
        }
    }
    let cells: Vec<CountCell> = groups
        .par_iter()
        .flat_map_iter(|(b, e, budget, shots, probs)| {
            (0..replicates).flat_map(move |rep| {
                let arm_shots = std::iter::once(*budget).chain(shots.iter().copied());
                arm_shots.zip(probs.iter()).enumerate().map(move |(a, (n, &p))| {
                    let scale_idx = if a == 0 { CellKey::NOISY_ARM } else { a as u32 - 1 };
                    let key = CellKey {
                        budget_idx: *b,
                        eps_idx: *e,
                        scale_idx,
                        rep_idx: rep,
                    };
                    let mut rng: ChaCha8Rng = cell_stream(master_seed, key);
                    CountCell {
                        budget_idx: *b,
                        eps_idx: *e,
                        scale_idx,
                        rep_idx: rep,
                        shots: n,
                        plus_count: binomial(n, p, &mut rng),
                    }
                })
            })
        })
        .collect();
    let base = rule.base();
    let table = CountTable {
        header: CountHeader {
            schema_version: COUNT_SCHEMA_VERSION,
            model_name: model.name().to_string(),
            model: None,
            declared: model.declared(),
            ideal_mean: model.ideal_mean(),
            scales: base.scales().to_vec(),
            coeffs: base.coeffs().to_vec(),
            allocation: allocation_label(rule),
            budgets: budgets.to_vec(),
            eps_grid: grids.to_vec(),
            replicates,
            master_seed,
        },
        cells,
    };
    Ok((table.deltas(), table))
}

fn plus_probability(mu: f64) -> f64 {
    ((1.0 + mu) / 2.0).clamp(0.0, 1.0)
}

/// Monte Carlo delta at a single `(eps, B)`.
pub fn mc_delta(
    model: &dyn NoiseObservableModel<f64>,
    rule: &RuleSpec<f64>,
    eps: f64,
    budget: u64,
    replicates: u32,
    master_seed: u64,
) -> Result<(DeltaPoint<f64>, CountTable)> {
    let (curves, table) = mc_sweep(model, rule, &[budget], &[vec![eps]], replicates, master_seed)?;
    Ok((curves[0].points[0], table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DeterministicLimitBinary, LinearBiasBinary, MonomialBalanceModel};
    use crate::rules::{build_rule, Allocation};

    fn rule13() -> RuleSpec<f64> {
        RuleSpec::<f64>::uniform(&[1.0, 3.0]).unwrap()
    }

    #[test]
    fn breakdown_identity() {
        let m = LinearBiasBinary::<f64>::new(0.3, -0.8).unwrap();
        let r = rule13();
        for b in [None, Some(r.base())] {
            let x = exact_mse(&m, b, 0.05, 500.0).unwrap();
            assert!((x.mse - (x.bias_sq + x.variance)).abs() < 1e-12);
            assert_eq!(x.bias_sq, x.bias * x.bias);
        }
    }

    #[test]
    fn linear_mean_is_annihilated() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let r = rule13();
        for eps in [1e-4, 0.01, 0.3, 0.6] {
            let z = exact_mse(&m, Some(r.base()), eps, 1000.0).unwrap();
            assert!(z.bias.abs() < 1e-12);
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let m = LinearBiasBinary::<f64>::new(0.5, 1.0).unwrap();
        assert_eq!(exact_delta(&m, None, 0.1, 10.0).unwrap().delta, 0.0);
        let mono = MonomialBalanceModel::<f64>::new(1, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(exact_delta(&mono, Some(&rule13()), 1.0, 1.0).unwrap().delta, 0.0);
    }

    #[test]
    fn domain_violation_at_scaled_level() {
        let m = LinearBiasBinary::<f64>::new(0.5, 1.0).unwrap();
        let err = exact_delta(&m, Some(&rule13()), 0.2, 100.0).unwrap_err();
        assert!(matches!(err, Error::ScaledDomain { scale, .. } if scale == 3.0));
    }

    #[test]
    fn integerization() {
        assert_eq!(integerize_allocation(&[0.5, 0.5], 1001).unwrap().iter().sum::<u64>(), 1001);
        assert_eq!(integerize_allocation(&[0.75, 0.25], 10).unwrap(), vec![8, 2]);
        assert_eq!(integerize_allocation(&[0.999, 0.001], 10).unwrap(), vec![9, 1]);
        assert_eq!(integerize_allocation(&[0.5, 0.5], 2).unwrap(), vec![1, 1]);
        assert!(matches!(
            integerize_allocation(&[0.4, 0.3, 0.3], 2),
            Err(Error::ZeroCell { budget: 2, .. })
        ));
    }

    #[test]
    fn zero_noise_monte_carlo_is_exactly_zero() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let (p, t) = mc_delta(&m, &rule13(), 0.0, 1000, 8, 3).unwrap();
        assert_eq!(p.delta, 0.0);
        assert_eq!(p.std_err, Some(0.0));
        t.validate().unwrap();
    }

    #[test]
    fn paired_seed_reproducibility() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let grids = vec![vec![0.001, 0.002], vec![0.0005]];
        let a = mc_sweep(&m, &rule13(), &[1000, 4001], &grids, 5, 99).unwrap().1;
        let b = mc_sweep(&m, &rule13(), &[1000, 4001], &grids, 5, 99).unwrap().1;
        assert_eq!(a, b);
        a.validate().unwrap();
        let c = mc_sweep(&m, &rule13(), &[1000, 4001], &grids, 5, 100).unwrap().1;
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn monomial_has_no_monte_carlo() {
        let mono = MonomialBalanceModel::<f64>::new(1, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(mc_delta(&mono, &rule13(), 0.1, 100, 4, 1).unwrap_err(), Error::NoSampler);
    }

    #[test]
    fn excess_variance_matches_penalty_at_small_eps() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let r = build_rule::<f64>(&[1.0, 3.0], Allocation::Uniform).unwrap();
        // A(eps) = K1 eps + L eps^2 with K1 = 10, L = -8.
        for eps in [1e-4, 1e-3, 1e-2] {
            let a = excess_variance(&m, &r, eps).unwrap();
            assert!((a - (10.0 * eps - 8.0 * eps * eps)).abs() < 1e-14);
        }
    }

    #[test]
    fn penalty_hook_reproduces_independent_case() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let r = rule13();
        let d0 = exact_delta(&m, Some(&r), 0.01, 1000.0).unwrap().delta;
        let d1 = exact_delta_with_penalty(&m, r.base(), 0.01, 1000.0, &|e| 10.0 * e - 8.0 * e * e)
            .unwrap()
            .delta;
        assert!((d0 - d1).abs() < 1e-15);
    }
}
