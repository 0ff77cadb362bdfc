//! Diagnostic regressions: boundary slope and intercept, variance exponent,
//! bias coefficient, predicted slope and the constant-level check.
//!
//! All regressions are plain unweighted least squares.

use serde::{Deserialize, Serialize};

use crate::boundary::CrossingEstimate;
use crate::error::{Error, Result};
use crate::models::NoiseObservableModel;
use crate::rules::RichardsonRule;
use crate::scalar::{compensated_sum, Real};

/// Minimum number of crossed budgets for a boundary fit.
pub const MIN_FIT_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit<T> {
    pub slope: T,
    /// `log C_fit`.
    pub intercept: T,
    pub r_squared: T,
    pub n_points: usize,
    pub censored_budgets: Vec<T>,
}

impl<T: Real> BoundaryFit<T> {
    pub fn c_fit(&self) -> T {
        self.intercept.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceExponentFit<T> {
    pub q_hat: T,
    pub log_nu_hat: T,
    pub window: (T, T),
    pub r_squared: T,
    pub n_points: usize,
}

impl<T: Real> VarianceExponentFit<T> {
    pub fn nu_hat(&self) -> T {
        self.log_nu_hat.exp()
    }
}

/// `mu(eps) - mu0 = alpha eps^a + beta eps^(a+1)`, no intercept (`a = 1` by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFit<T> {
    pub alpha_hat: T,
    pub beta_hat: T,
    pub alpha_std_err: T,
    pub power: u32,
    pub window: (T, T),
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck<T> {
    pub c_theory: T,
    pub c_fit: T,
    pub rel_error: T,
    pub k_hat: T,
    pub c_hat_plugin: T,
}

/// Simple linear regression `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub intercept: T,
    pub slope: T,
    pub r_squared: T,
}

pub fn ols_line<T: Real>(x: &[T], y: &[T]) -> Result<LineFit<T>> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Err(Error::invalid("line fit needs at least two (x, y) pairs"));
    }
    let nf = T::lit(n as f64);
    let mx = compensated_sum(x.iter().copied()) / nf;
    let my = compensated_sum(y.iter().copied()) / nf;
    let sxx = compensated_sum(x.iter().map(|&xi| (xi - mx) * (xi - mx)));
    let sxy = compensated_sum(x.iter().zip(y).map(|(&xi, &yi)| (xi - mx) * (yi - my)));
    let syy = compensated_sum(y.iter().map(|&yi| (yi - my) * (yi - my)));
    if !(sxx > T::zero()) {
        return Err(Error::invalid("line fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > T::zero() {
        (sxy * sxy / (sxx * syy)).min(T::one())
    } else {
        T::one()
    };
    Ok(LineFit {
        intercept,
        slope,
        r_squared,
    })
}

/// OLS of `log eps*` on `log B` over crossed budgets; censored ones are listed.
pub fn fit_loglog<T: Real>(crossings: &[CrossingEstimate<T>]) -> Result<BoundaryFit<T>> {
    let censored: Vec<T> = crossings
        .iter()
        .filter(|c| !c.is_crossed())
        .map(|c| c.budget)
        .collect();
    let points: Vec<(T, T)> = crossings
        .iter()
        .filter_map(|c| c.eps_star.filter(|_| c.is_crossed()).map(|e| (c.budget, e)))
        .collect();
    let mut fit = fit_loglog_points(&points).map_err(|e| match e {
        Error::InsufficientPoints { needed, got, .. } => Error::InsufficientPoints {
            needed,
            got,
            censored: censored.iter().map(|b| b.as_f64()).collect(),
        },
        other => other,
    })?;
    fit.censored_budgets = censored;
    Ok(fit)
}

/// OLS of `log eps*` on `log B` for explicit `(B, eps*)` pairs.
pub fn fit_loglog_points<T: Real>(points: &[(T, T)]) -> Result<BoundaryFit<T>> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_FIT_POINTS,
            got: points.len(),
            censored: Vec::new(),
        });
    }
    if points.iter().any(|&(b, e)| !(b > T::zero() && e > T::zero())) {
        return Err(Error::invalid("budgets and crossings must be positive"));
    }
    let x: Vec<T> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<T> = points.iter().map(|p| p.1.ln()).collect();
    let line = ols_line(&x, &y)?;
    Ok(BoundaryFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        n_points: points.len(),
        censored_budgets: Vec::new(),
    })
}

fn in_window<T: Real>(eps: T, window: (T, T)) -> bool {
    eps >= window.0 && eps <= window.1
}

fn check_window<T: Real>(window: (T, T)) -> Result<()> {
    if !(window.0 > T::zero() && window.1 > window.0) {
        return Err(Error::invalid("regression window must satisfy 0 < lo < hi"));
    }
    Ok(())
}

/// OLS of `log v` on `log eps` over samples inside `window`.
pub fn fit_variance_exponent<T: Real>(
    samples: &[(T, T)],
    window: (T, T),
) -> Result<VarianceExponentFit<T>> {
    check_window(window)?;
    let inside: Vec<(T, T)> = samples
        .iter()
        .copied()
        .filter(|&(e, _)| in_window(e, window))
        .collect();
    if let Some(&(eps, v)) = inside.iter().find(|&&(_, v)| !(v > T::zero())) {
        return Err(Error::NonpositiveVariance {
            eps: eps.as_f64(),
            variance: v.as_f64(),
        });
    }
    let x: Vec<T> = inside.iter().map(|s| s.0.ln()).collect();
    let y: Vec<T> = inside.iter().map(|s| s.1.ln()).collect();
    let line = ols_line(&x, &y)?;
    Ok(VarianceExponentFit {
        q_hat: line.slope,
        log_nu_hat: line.intercept,
        window,
        r_squared: line.r_squared,
        n_points: inside.len(),
    })
}

/// Variance-exponent fit on the model's exact variance curve over a geometric
/// grid of `n_points` inside `window`.
pub fn fit_variance_exponent_model<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    window: (T, T),
    n_points: usize,
) -> Result<VarianceExponentFit<T>> {
    let grid = window_grid(window, n_points)?;
    let samples = grid
        .into_iter()
        .map(|e| Ok((e, model.variance(e)?)))
        .collect::<Result<Vec<_>>>()?;
    fit_variance_exponent(&samples, window)
}

fn window_grid<T: Real>(window: (T, T), n_points: usize) -> Result<Vec<T>> {
    check_window(window)?;
    if n_points < 2 {
        return Err(Error::invalid("need at least two window points"));
    }
    let step = (window.1 / window.0).ln() / T::lit((n_points - 1) as f64);
    Ok((0..n_points)
        .map(|i| {
            if i == n_points - 1 {
                window.1
            } else {
                window.0 * (step * T::lit(i as f64)).exp()
            }
        })
        .collect())
}

/// `s = -1/(2 - q)`.
pub fn predict_slope<T: Real>(q_hat: T) -> Result<T> {
    if !(q_hat < T::lit(2.0)) {
        return Err(Error::SlopeUndefined { q: q_hat.as_f64() });
    }
    Ok(-T::one() / (T::lit(2.0) - q_hat))
}

/// No-intercept regression of `mu(eps) - mu0` on `(eps^a, eps^(a+1))`.
pub fn fit_bias<T: Real>(
    samples: &[(T, T)],
    mu0: T,
    window: (T, T),
    power: u32,
) -> Result<BiasFit<T>> {
    check_window(window)?;
    if power == 0 {
        return Err(Error::invalid("bias power must be >= 1"));
    }
    let inside: Vec<(T, T)> = samples
        .iter()
        .copied()
        .filter(|&(e, _)| in_window(e, window))
        .collect();
    let n = inside.len();
    if n < 2 {
        return Err(Error::invalid("bias fit needs at least two points in window"));
    }
    let a = power as i32;
    // Columns are rescaled by the window top.
    let s = window.1;
    let rows: Vec<(T, T, T)> = inside
        .iter()
        .map(|&(e, m)| {
            let u = e / s;
            (u.powi(a), u.powi(a + 1), m - mu0)
        })
        .collect();
    let s11 = compensated_sum(rows.iter().map(|r| r.0 * r.0));
    let s12 = compensated_sum(rows.iter().map(|r| r.0 * r.1));
    let s22 = compensated_sum(rows.iter().map(|r| r.1 * r.1));
    let s1y = compensated_sum(rows.iter().map(|r| r.0 * r.2));
    let s2y = compensated_sum(rows.iter().map(|r| r.1 * r.2));
    let det = s11 * s22 - s12 * s12;
    if !(det > T::epsilon() * s11 * s22) {
        return Err(Error::invalid("bias design matrix is singular on this window"));
    }
    let a_u = (s22 * s1y - s12 * s2y) / det;
    let b_u = (s11 * s2y - s12 * s1y) / det;
    let sse = compensated_sum(rows.iter().map(|r| {
        let e = r.2 - a_u * r.0 - b_u * r.1;
        e * e
    }));
    let dof = if n > 2 { T::lit((n - 2) as f64) } else { T::one() };
    let se_a_u = (sse / dof * s22 / det).max(T::zero()).sqrt();
    let scale_a = s.powi(a);
    let scale_b = s.powi(a + 1);
    Ok(BiasFit {
        alpha_hat: a_u / scale_a,
        beta_hat: b_u / scale_b,
        alpha_std_err: se_a_u / scale_a,
        power,
        window,
        n_points: n,
    })
}

/// Bias fit on the model's exact mean curve.
pub fn fit_bias_model<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    window: (T, T),
    n_points: usize,
    power: u32,
) -> Result<BiasFit<T>> {
    let grid = window_grid(window, n_points)?;
    let samples = grid
        .into_iter()
        .map(|e| Ok((e, model.mean(e)?)))
        .collect::<Result<Vec<_>>>()?;
    fit_bias(&samples, model.ideal_mean(), window, power)
}

/// Plug-in `K_hat = nu_hat [sum c^2 l^q_hat / pi - 1]`,
/// `C_hat = (K_hat / alpha_hat^2)^(1/(2 - q_hat))`, compared with the fitted
/// intercept. `c_theory` defaults to the plug-in constant.
pub fn constant_check<T: Real>(
    fit: &BoundaryFit<T>,
    variance: &VarianceExponentFit<T>,
    bias: &BiasFit<T>,
    rule: &RichardsonRule<T>,
    c_theory: Option<T>,
) -> Result<ConstantCheck<T>> {
    let q = variance.q_hat;
    if !(q < T::lit(2.0)) {
        return Err(Error::SlopeUndefined { q: q.as_f64() });
    }
    if bias.alpha_hat == T::zero() || bias.alpha_hat.abs() <= bias.alpha_std_err {
        return Err(Error::NoLeadingBias);
    }
    let k_hat = variance.nu_hat() * (rule.weighted_square_sum(q) - T::one());
    let c_hat_plugin =
        (k_hat / (bias.alpha_hat * bias.alpha_hat)).powf(T::one() / (T::lit(2.0) - q));
    let c_theory = c_theory.unwrap_or(c_hat_plugin);
    let c_fit = fit.c_fit();
    Ok(ConstantCheck {
        c_theory,
        c_fit,
        rel_error: (c_fit - c_theory).abs() / c_theory,
        k_hat,
        c_hat_plugin,
    })
}
