//! Lower help-harm crossing, regime classification and the theoretical
//! predictions for the crossing scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NoiseObservableModel;
use crate::mse::{DeltaCurve, DeltaPoint};
use crate::rules::{variance_penalty, RichardsonRule, RuleSpec};
use crate::scalar::{compensated_sum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingStatus {
    Crossed,
    /// Delta is never strictly negative on the grid.
    NoNegativeRegion,
    /// Delta goes negative but never turns positive inside the window.
    NoCrossingInWindow,
}

impl CrossingStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CrossingStatus::Crossed => "crossed",
            CrossingStatus::NoNegativeRegion => "no_negative_region",
            CrossingStatus::NoCrossingInWindow => "no_crossing_in_window",
        }
    }
}

impl std::str::FromStr for CrossingStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossed" => Ok(CrossingStatus::Crossed),
            "no_negative_region" => Ok(CrossingStatus::NoNegativeRegion),
            "no_crossing_in_window" => Ok(CrossingStatus::NoCrossingInWindow),
            other => Err(Error::invalid(format!("unknown crossing status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate<T> {
    pub budget: T,
    pub eps_star: Option<T>,
    pub status: CrossingStatus,
    pub bracket_lo: Option<T>,
    pub bracket_hi: Option<T>,
}

impl<T: Real> CrossingEstimate<T> {
    fn censored(budget: T, status: CrossingStatus) -> Self {
        Self {
            budget,
            eps_star: None,
            status,
            bracket_lo: None,
            bracket_hi: None,
        }
    }

    pub fn is_crossed(&self) -> bool {
        self.status == CrossingStatus::Crossed
    }
}

/// First sign change from negative to nonnegative after at least one strictly
/// negative point, located by linear interpolation in `(eps, delta)`.
///
/// A grid point with delta exactly zero at the upper end of the bracket is the
/// crossing itself.
pub fn find_crossing<T: Real>(points: &[DeltaPoint<T>]) -> Result<CrossingEstimate<T>> {
    if points.len() < 3 {
        return Err(Error::invalid("crossing search needs at least 3 grid points"));
    }
    let budget = points[0].budget;
    for w in points.windows(2) {
        if !(w[1].eps > w[0].eps) {
            return Err(Error::invalid("eps grid must be strictly increasing"));
        }
    }
    let mut seen_negative = false;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.delta < T::zero() {
            seen_negative = true;
            if b.delta >= T::zero() {
                let eps_star = if b.delta == T::zero() {
                    b.eps
                } else {
                    let t = -a.delta / (b.delta - a.delta);
                    let e = (a.eps + t * (b.eps - a.eps)).min(b.eps);
                    if e > a.eps {
                        e
                    } else {
                        (a.eps * (T::one() + T::lit(2.0) * T::epsilon())).min(b.eps)
                    }
                };
                return Ok(CrossingEstimate {
                    budget,
                    eps_star: Some(eps_star),
                    status: CrossingStatus::Crossed,
                    bracket_lo: Some(a.eps),
                    bracket_hi: Some(b.eps),
                });
            }
        }
    }
    let last_negative = points.last().map_or(false, |p| p.delta < T::zero());
    Ok(CrossingEstimate::censored(
        budget,
        if seen_negative || last_negative {
            CrossingStatus::NoCrossingInWindow
        } else {
            CrossingStatus::NoNegativeRegion
        },
    ))
}

pub fn find_crossings<T: Real>(curves: &[DeltaCurve<T>]) -> Result<Vec<CrossingEstimate<T>>> {
    curves.iter().map(|c| find_crossing(&c.points)).collect()
}

/// Refines a crossing to root-finding precision by Illinois-modified regula
/// falsi on `f` inside a bracket with `f(lo) < 0 <= f(hi)`.
pub fn polish_crossing<T: Real>(
    f: impl Fn(T) -> Result<T>,
    lo: T,
    hi: T,
    rel_tol: T,
) -> Result<T> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if !(fa < T::zero() && fb >= T::zero()) {
        return Err(Error::invalid("polish_crossing needs f(lo) < 0 <= f(hi)"));
    }
    if fb == T::zero() {
        return Ok(b);
    }
    let half = T::lit(0.5);
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c > a && c < b { c } else { half * (a + b) };
        let fc = f(c)?;
        if fc < T::zero() {
            a = c;
            fa = fc;
            if side == -1 {
                fb = fb * half;
            }
            side = -1;
        } else {
            if fc == T::zero() {
                return Ok(c);
            }
            b = c;
            fb = fc;
            if side == 1 {
                fa = fa * half;
            }
            side = 1;
        }
        if (b - a) <= rel_tol * b {
            break;
        }
    }
    Ok(a + (b - a) * (-fa) / (fb - fa))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `q < 2p`: shrinking power-law boundary.
    Subcritical,
    /// `q = 2p`: budget threshold.
    Critical,
    /// `q > 2p`: no leading-order shrinking boundary.
    Supercritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport<T> {
    pub p: u32,
    pub q: T,
    pub d_p: T,
    pub k_q: T,
    pub regime: Regime,
    /// `C_{p,q} = (K_q / D_p)^(1/(2p-q))` (subcritical).
    pub c_pq: Option<T>,
    /// `-1/(2p-q)` (subcritical).
    pub exponent: Option<T>,
    /// `K_q / D_p` (critical).
    pub b_star: Option<T>,
    /// Convergence rate `min(delta_b, delta_v)/(2p-q)` (subcritical, when the
    /// remainder exponents are known).
    pub eta: Option<T>,
}

impl<T: Real> RegimeReport<T> {
    /// `r = 1/(2p-q)` in the subcritical regime.
    pub fn rate(&self) -> Option<T> {
        self.exponent.map(|e| -e)
    }

    /// Leading-order crossing `C B^(-r)`.
    pub fn predicted_crossing(&self, budget: T) -> Option<T> {
        Some(self.c_pq? * budget.powf(-self.rate()?))
    }

    /// One-line verdict for reports.
    pub fn verdict(&self) -> String {
        match self.regime {
            Regime::Subcritical => format!(
                "shrinking lower boundary eps*(B) ~ {} B^({})",
                self.c_pq.unwrap(),
                self.exponent.unwrap()
            ),
            Regime::Critical => format!(
                "budget threshold {}; helps for B>B* at small eps, harms for B<B*",
                self.b_star.unwrap()
            ),
            Regime::Supercritical => "no leading-order shrinking lower boundary".into(),
        }
    }
}

fn critical_tol<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(16.0))
}

/// Classifies the local regime of `delta = D eps^(2p) - K eps^q / B + ...`.
pub fn classify_regime<T: Real>(
    p: u32,
    q: T,
    d_p: T,
    k_q: T,
    remainder_exponents: Option<(T, T)>,
) -> Result<RegimeReport<T>> {
    if !(d_p > T::zero()) {
        return Err(Error::NoBiasImprovement { d_p: d_p.as_f64() });
    }
    if p < 1 {
        return Err(Error::invalid("p must be >= 1"));
    }
    if !(q >= T::zero()) {
        return Err(Error::invalid("q must be >= 0"));
    }
    if !(k_q > T::zero()) {
        return Err(Error::invalid("K_q must be positive"));
    }
    let gap = T::lit(2.0 * p as f64) - q;
    let mut report = RegimeReport {
        p,
        q,
        d_p,
        k_q,
        regime: Regime::Subcritical,
        c_pq: None,
        exponent: None,
        b_star: None,
        eta: None,
    };
    if gap.abs() <= critical_tol::<T>() * T::lit(2.0 * p as f64) {
        report.regime = Regime::Critical;
        report.b_star = Some(k_q / d_p);
    } else if gap < T::zero() {
        report.regime = Regime::Supercritical;
    } else {
        report.c_pq = Some((k_q / d_p).powf(T::one() / gap));
        report.exponent = Some(-T::one() / gap);
        if let Some((db, dv)) = remainder_exponents {
            if !(db > T::zero() && dv > T::zero()) {
                return Err(Error::invalid("remainder exponents must be positive"));
            }
            report.eta = Some(db.min(dv) / gap);
        }
    }
    Ok(report)
}

/// Leading bias improvement `D_p = A_p^2 (1 - rho_p^2)` with
/// `rho_p = sum_j c_j l_j^p`.
pub fn bias_improvement<T: Real>(rule: &RichardsonRule<T>, p: u32, a_p: T) -> Result<T> {
    let rho = if (p as usize) <= rule.order() {
        T::zero()
    } else {
        rule.moment(T::lit(p as f64))
    };
    let d_p = a_p * a_p * (T::one() - rho * rho);
    if !(d_p > T::zero()) {
        return Err(Error::NoBiasImprovement { d_p: d_p.as_f64() });
    }
    Ok(d_p)
}

/// Theory prediction for a model and fixed rule, using the rule's own
/// allocation penalty `K_{q,k}`.
pub fn theoretical_boundary<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RichardsonRule<T>,
) -> Result<RegimeReport<T>> {
    boundary_with_penalty(model, rule, false)
}

/// Theory prediction matching a rule specification's allocation mode
/// (`K_q^opt` for optimal allocation).
pub fn theoretical_boundary_spec<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    spec: &RuleSpec<T>,
) -> Result<RegimeReport<T>> {
    boundary_with_penalty(model, spec.base(), spec.is_optimal())
}

fn boundary_with_penalty<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    rule: &RichardsonRule<T>,
    optimal: bool,
) -> Result<RegimeReport<T>> {
    if let Some(m) = model.as_monomial() {
        return classify_regime(m.p, m.q, m.d_p, m.k_q, m.remainder_exponents());
    }
    let d = model.declared();
    if d.p == 0 {
        return Err(Error::invalid("model declares no integer leading bias order"));
    }
    let a_p = d
        .bias_coefficient
        .ok_or_else(|| Error::invalid("model declares no leading bias coefficient"))?;
    let nu = d
        .nu
        .ok_or_else(|| Error::invalid("model declares no variance level"))?;
    let d_p = bias_improvement(rule, d.p, a_p)?;
    let k = variance_penalty(rule, d.q, nu);
    let k_q = if optimal { k.k_opt } else { k.k_fixed };
    classify_regime(d.p, d.q, d_p, k_q, None)
}

/// Finite-budget bracket `[(1-rho) C B^-r, (1+rho) C B^-r]`, guaranteed to
/// straddle the crossing for `B >= b0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetBracket<T> {
    pub rho: T,
    pub x_minus: T,
    pub x_plus: T,
    pub m_rho: T,
    pub b0: T,
    pub r: T,
}

impl<T: Real> BudgetBracket<T> {
    pub fn eps_lo(&self, budget: T) -> T {
        self.x_minus * budget.powf(-self.r)
    }

    pub fn eps_hi(&self, budget: T) -> T {
        self.x_plus * budget.powf(-self.r)
    }
}

/// Bracket for remainders bounded by `L_b eps^(2p+delta_b) + L_v eps^(q+delta_v)/B`
/// on `0 < eps <= eps0`.
pub fn budget_bracket<T: Real>(
    regime: &RegimeReport<T>,
    rho: T,
    l_b: T,
    l_v: T,
    delta_b: T,
    delta_v: T,
    eps0: T,
) -> Result<BudgetBracket<T>> {
    let (c, r) = match (regime.c_pq, regime.rate()) {
        (Some(c), Some(r)) if regime.regime == Regime::Subcritical => (c, r),
        _ => return Err(Error::invalid("budget bracket requires the subcritical regime")),
    };
    if !(rho > T::zero() && rho < T::one()) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    if !(l_b >= T::zero() && l_v >= T::zero()) {
        return Err(Error::invalid("remainder amplitudes must be >= 0"));
    }
    if !(delta_b > T::zero() && delta_v > T::zero() && eps0 > T::zero()) {
        return Err(Error::invalid("remainder exponents and eps0 must be positive"));
    }
    let (p2, q, d, k) = (T::lit(2.0 * regime.p as f64), regime.q, regime.d_p, regime.k_q);
    let x_minus = (T::one() - rho) * c;
    let x_plus = (T::one() + rho) * c;
    let m_rho = (k * x_minus.powf(q) - d * x_minus.powf(p2)).min(d * x_plus.powf(p2) - k * x_plus.powf(q));
    if !(m_rho > T::zero()) {
        return Err(Error::invalid(format!("bracket margin {m_rho} is not positive")));
    }
    let four = T::lit(4.0);
    let bias_term = (four * l_b * x_plus.powf(p2 + delta_b) / m_rho).powf(T::one() / (r * delta_b));
    let var_term = (four * l_v * x_plus.powf(q + delta_v) / m_rho).powf(T::one() / (r * delta_v));
    let domain_term = (x_plus / eps0).powf(T::one() / r);
    Ok(BudgetBracket {
        rho,
        x_minus,
        x_plus,
        m_rho,
        b0: bias_term.max(var_term).max(domain_term),
        r,
    })
}

/// Outcome of evaluating delta along `eps_B = B^(-s)` for `s > r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCheck<T> {
    pub schedule_exponent: T,
    pub budgets: Vec<T>,
    pub deltas: Vec<T>,
    /// Smallest ladder budget from which every delta is negative.
    pub onset: Option<T>,
    pub passed: bool,
}

/// Checks that delta is negative along a schedule shrinking faster than the
/// boundary scale.
pub fn local_optimality_check<T: Real>(
    regime: &RegimeReport<T>,
    schedule_exponent: T,
    ladder: &[T],
    delta: impl Fn(T, T) -> Result<T>,
) -> Result<OptimalityCheck<T>> {
    let r = match regime.rate() {
        Some(r) if regime.regime == Regime::Subcritical => r,
        _ => return Err(Error::invalid("local optimality check requires the subcritical regime")),
    };
    if !(schedule_exponent > r) {
        return Err(Error::invalid(format!(
            "schedule exponent {schedule_exponent} must exceed r = {r}"
        )));
    }
    let deltas = ladder
        .iter()
        .map(|&b| delta(b.powf(-schedule_exponent), b))
        .collect::<Result<Vec<_>>>()?;
    let tail_start = deltas.iter().rposition(|&d| !(d < T::zero())).map_or(0, |i| i + 1);
    let onset = ladder.get(tail_start).copied();
    Ok(OptimalityCheck {
        schedule_exponent,
        budgets: ladder.to_vec(),
        deltas,
        onset,
        passed: onset.is_some(),
    })
}

/// Geometric grid from `lo` to `hi` with `points_per_decade` points per decade
/// (both ends included).
pub fn geometric_grid<T: Real>(lo: T, hi: T, points_per_decade: u32) -> Result<Vec<T>> {
    if !(lo > T::zero() && hi > lo) {
        return Err(Error::invalid("geometric grid needs 0 < lo < hi"));
    }
    if points_per_decade == 0 {
        return Err(Error::invalid("points_per_decade must be positive"));
    }
    let decades = (hi / lo).log10();
    let n = ((decades * T::lit(points_per_decade as f64)).ceil().to_usize().unwrap_or(1)).max(2);
    let step = (hi / lo).ln() / T::lit(n as f64);
    Ok((0..=n)
        .map(|i| {
            if i == n {
                hi
            } else {
                lo * (step * T::lit(i as f64)).exp()
            }
        })
        .collect())
}

/// Auto window `[lo_factor, hi_factor] * C_guess * B^(-r)` for one budget.
pub fn auto_window<T: Real>(
    regime: &RegimeReport<T>,
    budget: T,
    lo_factor: T,
    hi_factor: T,
    points_per_decade: u32,
) -> Result<Vec<T>> {
    let centre = regime
        .predicted_crossing(budget)
        .ok_or_else(|| Error::invalid("auto window requires a subcritical theory guess"))?;
    geometric_grid(lo_factor * centre, hi_factor * centre, points_per_decade)
}

/// Relative spacing of a geometric grid (`ratio - 1`), the interpolation
/// tolerance used when comparing crossings with exact roots.
pub fn grid_cell<T: Real>(grid: &[T]) -> T {
    grid.windows(2)
        .map(|w| w[1] / w[0] - T::one())
        .fold(T::zero(), T::max)
}

/// Mean of `log(eps*/(C B^-r))` over crossed budgets, for quick diagnostics.
pub fn mean_log_ratio<T: Real>(crossings: &[CrossingEstimate<T>], regime: &RegimeReport<T>) -> Option<T> {
    let logs: Vec<T> = crossings
        .iter()
        .filter_map(|c| Some((c.eps_star? / regime.predicted_crossing(c.budget)?).ln()))
        .collect();
    if logs.is_empty() {
        return None;
    }
    Some(compensated_sum(logs.iter().copied()) / T::lit(logs.len() as f64))
}
