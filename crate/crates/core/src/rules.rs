//! Fixed Richardson extrapolation rules, variance-penalty constants and
//! shot allocations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_with_condition;
use crate::models::NoiseObservableModel;
use crate::scalar::{compensated_sum, Real};

/// Highest supported extrapolation order.
pub const MAX_ORDER: usize = 6;
/// Largest accepted 1-norm condition number of the scale-power system.
pub const MAX_CONDITION: f64 = 1e12;
/// Floor assigned to zero-variance levels by [`optimal_allocation`].
pub const MIN_FRACTION: f64 = 1e-6;

/// Shot allocation across the noise levels of a rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Allocation<T> {
    Uniform,
    Explicit(Vec<T>),
}

/// A validated order-`k` rule: scales `1 = l_0 < ... < l_k`, coefficients
/// cancelling powers `1..=k` of the noise, and positive shot fractions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonRule<T> {
    scales: Vec<T>,
    coeffs: Vec<T>,
    alloc: Vec<T>,
    condition: T,
}

/// Builds the rule for `scales`, solving the scale-power system by LU with
/// partial pivoting.
pub fn build_rule<T: Real>(scales: &[T], alloc: Allocation<T>) -> Result<RichardsonRule<T>> {
    let (coeffs, condition) = richardson_coefficients(scales)?;
    let k1 = scales.len();
    let alloc = match alloc {
        Allocation::Uniform => vec![T::one() / T::lit(k1 as f64); k1],
        Allocation::Explicit(a) => a,
    };
    let rule = RichardsonRule {
        scales: scales.to_vec(),
        coeffs,
        alloc,
        condition,
    };
    rule.validate()?;
    Ok(rule)
}

/// Coefficients solving `sum c_j = 1`, `sum c_j l_j^m = 0` for `m = 1..=k`,
/// together with the condition estimate of the system.
pub fn richardson_coefficients<T: Real>(scales: &[T]) -> Result<(Vec<T>, T)> {
    check_scales(scales)?;
    let n = scales.len();
    let matrix: Vec<Vec<T>> = (0..n)
        .map(|m| scales.iter().map(|&l| l.powi(m as i32)).collect())
        .collect();
    let mut rhs = vec![T::zero(); n];
    rhs[0] = T::one();
    let (coeffs, condition) = solve_with_condition(matrix, &rhs)?;
    if !(condition.as_f64() <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition: condition.as_f64(),
        });
    }
    Ok((coeffs, condition))
}

fn check_scales<T: Real>(scales: &[T]) -> Result<()> {
    if scales.len() < 2 {
        return Err(Error::InvalidRule("need at least two scale factors".into()));
    }
    if scales.len() > MAX_ORDER + 1 {
        return Err(Error::InvalidRule(format!(
            "order {} exceeds the supported maximum {MAX_ORDER}",
            scales.len() - 1
        )));
    }
    if scales[0] != T::one() {
        return Err(Error::InvalidRule(format!(
            "first scale factor must be exactly 1, got {}",
            scales[0]
        )));
    }
    if scales.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidRule("scale factors must be finite".into()));
    }
    for w in scales.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidRule(format!(
                "scale factors must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl<T: Real> RichardsonRule<T> {
    /// Order `k` (number of scales minus one).
    pub fn order(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn alloc(&self) -> &[T] {
        &self.alloc
    }

    pub fn condition(&self) -> T {
        self.condition
    }

    /// Moment `sum_j c_j l_j^m`.
    pub fn moment(&self, m: T) -> T {
        compensated_sum(
            self.coeffs
                .iter()
                .zip(&self.scales)
                .map(|(&c, &l)| c * l.powf(m)),
        )
    }

    /// Residuals of the defining identities: entry 0 is `sum c - 1`, entry `m`
    /// is `sum c l^m` for `m = 1..=k`.
    pub fn identity_residuals(&self) -> Vec<T> {
        (0..=self.order())
            .map(|m| {
                let s = self.moment(T::lit(m as f64));
                if m == 0 {
                    s - T::one()
                } else {
                    s
                }
            })
            .collect()
    }

    /// `sum_j |c_j|`.
    pub fn abs_coeff_sum(&self) -> T {
        compensated_sum(self.coeffs.iter().map(|c| c.abs()))
    }

    /// Same scales and coefficients with a different allocation.
    pub fn with_allocation(&self, alloc: Vec<T>) -> Result<Self> {
        let rule = Self {
            alloc,
            ..self.clone()
        };
        rule.validate()?;
        Ok(rule)
    }

    /// `sum_j c_j^2 l_j^q / pi_j`.
    pub fn weighted_square_sum(&self, q: T) -> T {
        compensated_sum(
            self.coeffs
                .iter()
                .zip(&self.scales)
                .zip(&self.alloc)
                .map(|((&c, &l), &pi)| c * c * l.powf(q) / pi),
        )
    }

    fn validate(&self) -> Result<()> {
        let k1 = self.scales.len();
        if self.alloc.len() != k1 {
            return Err(Error::InvalidRule(format!(
                "allocation has {} fractions for {} scales",
                self.alloc.len(),
                k1
            )));
        }
        if self.alloc.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::InvalidRule("allocation fractions must be positive".into()));
        }
        let total = compensated_sum(self.alloc.iter().copied());
        if (total - T::one()).abs() > T::identity_tol() {
            return Err(Error::InvalidRule(format!(
                "allocation fractions sum to {total}, not 1"
            )));
        }
        for (m, r) in self.identity_residuals().into_iter().enumerate() {
            // High powers of large scales are checked against the rounding level
            // of their own terms.
            let allowed = T::identity_tol().max(T::lit(8.0) * T::epsilon() * self.term_magnitude(m));
            if r.abs() > allowed {
                return Err(Error::InvalidRule(format!(
                    "identity residual {r} at power {m} exceeds tolerance {allowed}"
                )));
            }
        }
        if self.abs_coeff_sum() <= T::one() {
            return Err(Error::InvalidRule(
                "rule is trivial: sum |c_j| must exceed 1".into(),
            ));
        }
        Ok(())
    }

    fn term_magnitude(&self, m: usize) -> T {
        compensated_sum(
            self.coeffs
                .iter()
                .zip(&self.scales)
                .map(|(&c, &l)| (c * l.powi(m as i32)).abs()),
        )
    }
}

/// Leading variance-penalty constants of a rule for `v(eps) ~ nu eps^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConstants<T> {
    pub q: T,
    pub nu: T,
    /// `K_{q,k}` for the rule's own allocation.
    pub k_fixed: T,
    /// `K_q^opt` under the leading-order optimal allocation.
    pub k_opt: T,
}

pub fn variance_penalty<T: Real>(rule: &RichardsonRule<T>, q: T, nu: T) -> PenaltyConstants<T> {
    let k_fixed = nu * (rule.weighted_square_sum(q) - T::one());
    let half_q = q / T::lit(2.0);
    let root_sum = compensated_sum(
        rule.coeffs
            .iter()
            .zip(&rule.scales)
            .map(|(&c, &l)| c.abs() * l.powf(half_q)),
    );
    let k_opt = nu * (root_sum * root_sum - T::one());
    PenaltyConstants {
        q,
        nu,
        k_fixed,
        k_opt,
    }
}

/// Allocation proportional to `|c_j| sqrt(v(l_j eps))`, minimizing the ZNE
/// variance at `eps` for a fixed budget.
///
/// Levels with zero variance (but not all of them) get [`MIN_FRACTION`] and the
/// fractions are renormalized.
pub fn optimal_allocation<T: Real>(
    rule: &RichardsonRule<T>,
    model: &dyn NoiseObservableModel<T>,
    eps: T,
) -> Result<Vec<T>> {
    let mut weights = Vec::with_capacity(rule.scales.len());
    for (&c, &l) in rule.coeffs.iter().zip(&rule.scales) {
        let v = scaled_variance(model, l, eps)?;
        weights.push(c.abs() * v.max(T::zero()).sqrt());
    }
    allocation_from_weights(weights)
}

/// Leading-order optimal fractions `pi_j ∝ |c_j| l_j^(q/2)` for `v ~ nu eps^q`.
pub fn leading_optimal_allocation<T: Real>(rule: &RichardsonRule<T>, q: T) -> Result<Vec<T>> {
    let half_q = q / T::lit(2.0);
    allocation_from_weights(
        rule.coeffs
            .iter()
            .zip(&rule.scales)
            .map(|(&c, &l)| c.abs() * l.powf(half_q))
            .collect(),
    )
}

pub(crate) fn allocation_from_weights<T: Real>(mut weights: Vec<T>) -> Result<Vec<T>> {
    let positive = weights.iter().filter(|&&w| w > T::zero()).count();
    if positive == 0 {
        return Err(Error::DegenerateVariance);
    }
    let total = compensated_sum(weights.iter().copied());
    for w in weights.iter_mut() {
        *w = *w / total;
    }
    if positive < weights.len() {
        let floor = T::lit(MIN_FRACTION);
        for w in weights.iter_mut() {
            if *w <= T::zero() {
                *w = floor;
            }
        }
        let total = compensated_sum(weights.iter().copied());
        for w in weights.iter_mut() {
            *w = *w / total;
        }
    }
    Ok(weights)
}

/// `v(l eps)` with domain errors reporting the offending scale.
pub(crate) fn scaled_variance<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    scale: T,
    eps: T,
) -> Result<T> {
    model.variance(scale * eps).map_err(|e| attach_scale(e, scale, eps))
}

pub(crate) fn scaled_mean<T: Real>(
    model: &dyn NoiseObservableModel<T>,
    scale: T,
    eps: T,
) -> Result<T> {
    model.mean(scale * eps).map_err(|e| attach_scale(e, scale, eps))
}

fn attach_scale<T: Real>(e: Error, scale: T, eps: T) -> Error {
    match e {
        Error::Domain { bound, .. } => Error::ScaledDomain {
            eps: eps.as_f64(),
            scale: scale.as_f64(),
            bound,
        },
        other => other,
    }
}

/// How a rule's allocation is chosen when the rule is used across a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum AllocationMode<T> {
    Uniform,
    Explicit(Vec<T>),
    /// Recomputed by [`optimal_allocation`] at each evaluated noise level.
    Optimal,
}

/// Rule specification as written in an experiment configuration:
/// `{scales = [..], alloc = "uniform" | [..] | "optimal"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpecRepr<T>", into = "RuleSpecRepr<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct RuleSpec<T: Real> {
    pub scales: Vec<T>,
    pub alloc: AllocationMode<T>,
    base: RichardsonRule<T>,
}

impl<T: Real> RuleSpec<T> {
    pub fn new(scales: Vec<T>, alloc: AllocationMode<T>) -> Result<Self> {
        let fixed = match &alloc {
            AllocationMode::Explicit(a) => Allocation::Explicit(a.clone()),
            AllocationMode::Uniform | AllocationMode::Optimal => Allocation::Uniform,
        };
        let base = build_rule(&scales, fixed)?;
        Ok(Self {
            scales,
            alloc,
            base,
        })
    }

    pub fn uniform(scales: &[T]) -> Result<Self> {
        Self::new(scales.to_vec(), AllocationMode::Uniform)
    }

    pub fn optimal(scales: &[T]) -> Result<Self> {
        Self::new(scales.to_vec(), AllocationMode::Optimal)
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self.alloc, AllocationMode::Optimal)
    }

    /// Rule with the configured allocation (uniform placeholder when optimal).
    pub fn base(&self) -> &RichardsonRule<T> {
        &self.base
    }

    /// Rule as used at noise level `eps` for `model`.
    pub fn at(&self, model: &dyn NoiseObservableModel<T>, eps: T) -> Result<RichardsonRule<T>> {
        match self.alloc {
            AllocationMode::Optimal => {
                let alloc = optimal_allocation(&self.base, model, eps)?;
                self.base.with_allocation(alloc)
            }
            _ => Ok(self.base.clone()),
        }
    }

    /// Penalty constant for `v ~ nu eps^q` matching this allocation mode.
    pub fn penalty(&self, q: T, nu: T) -> T {
        let k = variance_penalty(&self.base, q, nu);
        if self.is_optimal() {
            k.k_opt
        } else {
            k.k_fixed
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AllocRepr<T> {
    Name(String),
    Fractions(Vec<T>),
}

#[derive(Serialize, Deserialize)]
struct RuleSpecRepr<T> {
    scales: Vec<T>,
    #[serde(default = "default_alloc")]
    alloc: AllocRepr<T>,
}

fn default_alloc<T>() -> AllocRepr<T> {
    AllocRepr::Name("uniform".into())
}

impl<T: Real> TryFrom<RuleSpecRepr<T>> for RuleSpec<T> {
    type Error = Error;

    fn try_from(r: RuleSpecRepr<T>) -> Result<Self> {
        let alloc = match r.alloc {
            AllocRepr::Name(n) if n == "uniform" => AllocationMode::Uniform,
            AllocRepr::Name(n) if n == "optimal" => AllocationMode::Optimal,
            AllocRepr::Name(n) => {
                return Err(Error::InvalidRule(format!(
                    "unknown allocation '{n}' (expected \"uniform\", \"optimal\" or a list)"
                )))
            }
            AllocRepr::Fractions(f) => AllocationMode::Explicit(f),
        };
        RuleSpec::new(r.scales, alloc)
    }
}

impl<T: Real> From<RuleSpec<T>> for RuleSpecRepr<T> {
    fn from(s: RuleSpec<T>) -> Self {
        let alloc = match s.alloc {
            AllocationMode::Uniform => AllocRepr::Name("uniform".into()),
            AllocationMode::Optimal => AllocRepr::Name("optimal".into()),
            AllocationMode::Explicit(f) => AllocRepr::Fractions(f),
        };
        RuleSpecRepr {
            scales: s.scales,
            alloc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DeterministicLimitBinary, LinearBiasBinary};

    fn uniform(scales: &[f64]) -> RichardsonRule<f64> {
        build_rule(scales, Allocation::Uniform).unwrap()
    }

    #[test]
    fn leading_fractions_for_q1() {
        // |c| sqrt(l) = (3/2, sqrt(3)/2)
        let pi = leading_optimal_allocation(&uniform(&[1.0, 3.0]), 1.0).unwrap();
        let w = 3.0f64.sqrt() / 2.0;
        assert!((pi[0] - 1.5 / (1.5 + w)).abs() < 1e-15);
        assert!((pi[0] + pi[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_rules() {
        let r = uniform(&[1.0, 3.0]);
        assert!((r.coeffs()[0] - 1.5).abs() < 1e-15);
        assert!((r.coeffs()[1] + 0.5).abs() < 1e-15);
        assert_eq!(r.alloc(), &[0.5, 0.5]);

        let r = uniform(&[1.0, 2.0]);
        assert!((r.coeffs()[0] - 2.0).abs() < 1e-15);
        assert!((r.coeffs()[1] + 1.0).abs() < 1e-15);

        // c_0 -> 1, c_1 -> 0 for a widely separated second scale.
        let r = uniform(&[1.0, 1e5]);
        assert!((r.coeffs()[0] - 1.0).abs() < 1e-4);
        assert!(r.coeffs()[1].abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_scales() {
        for bad in [
            vec![1.0],
            vec![2.0, 3.0],
            vec![1.0, 3.0, 3.0],
            vec![1.0, 3.0, 2.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        ] {
            assert!(matches!(
                build_rule(&bad, Allocation::Uniform),
                Err(Error::InvalidRule(_))
            ));
        }
    }

    #[test]
    fn ill_conditioned_rejected() {
        let scales = [1.0, 1.0 + 1e-4, 1.0 + 2e-4, 1.0 + 3e-4];
        assert!(matches!(
            build_rule(&scales, Allocation::Uniform),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn allocation_checked() {
        let scales = [1.0, 3.0];
        assert!(build_rule(&scales, Allocation::Explicit(vec![0.3, 0.7])).is_ok());
        assert!(build_rule(&scales, Allocation::Explicit(vec![0.3, 0.6])).is_err());
        assert!(build_rule(&scales, Allocation::Explicit(vec![1.0, 0.0])).is_err());
        assert!(build_rule(&scales, Allocation::Explicit(vec![1.0])).is_err());
    }

    #[test]
    fn penalty_examples() {
        let r = uniform(&[1.0, 3.0]);
        assert!((variance_penalty(&r, 0.0, 1.0).k_fixed - 4.0).abs() < 1e-12);
        assert!((variance_penalty(&r, 1.0, 2.0).k_fixed - 10.0).abs() < 1e-12);
        let k_opt = variance_penalty(&r, 1.0, 1.0).k_opt;
        let expected = (1.5 + 0.5 * 3f64.sqrt()).powi(2) - 1.0;
        assert!((k_opt - expected).abs() < 1e-12);
        assert!((k_opt - 4.5981).abs() < 1e-4);
    }

    #[test]
    fn optimal_allocation_examples() {
        let r = uniform(&[1.0, 3.0]);
        // Constant variance: proportional to |c|.
        let coin = LinearBiasBinary::<f64>::new(0.0, 0.0).unwrap();
        let pi = optimal_allocation(&r, &coin, 0.2).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-15 && (pi[1] - 0.25).abs() < 1e-15);

        let det = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let pi = optimal_allocation(&r, &det, 0.01).unwrap();
        let (w0, w1) = (1.5 * 0.0199f64.sqrt(), 0.5 * 0.0591f64.sqrt());
        assert!((pi[0] - w0 / (w0 + w1)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_levels() {
        let r = uniform(&[1.0, 3.0]);
        let det = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        assert_eq!(optimal_allocation(&r, &det, 0.0), Err(Error::DegenerateVariance));

        let pi = allocation_from_weights(vec![0.0, 2.0, 1.0]).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(pi[0] > 0.0 && pi[0] < 1.1e-6);
    }

    #[test]
    fn optimal_spec_reports_scaled_domain() {
        let det = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let spec = RuleSpec::<f64>::optimal(&[1.0, 3.0]).unwrap();
        let err = spec.at(&det, 1.0).unwrap_err();
        assert!(matches!(err, Error::ScaledDomain { scale, .. } if scale == 3.0));
    }

    #[test]
    fn rule_spec_serde() {
        let s: RuleSpec<f64> = serde_json::from_str(r#"{"scales":[1,3],"alloc":"optimal"}"#).unwrap();
        assert!(s.is_optimal());
        let s: RuleSpec<f64> = serde_json::from_str(r#"{"scales":[1,3],"alloc":[0.25,0.75]}"#).unwrap();
        assert_eq!(s.base().alloc(), &[0.25, 0.75]);
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"scales":[1.0,3.0],"alloc":[0.25,0.75]}"#
        );
        assert!(serde_json::from_str::<RuleSpec<f64>>(r#"{"scales":[1,3],"alloc":"best"}"#).is_err());
        assert!(serde_json::from_str::<RuleSpec<f64>>(r#"{"scales":[3,1]}"#).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let r = build_rule(&[1.0f32, 3.0], Allocation::Uniform).unwrap();
        assert!((r.coeffs()[0] - 1.5).abs() < 1e-6);
        let k = variance_penalty(&r, 0.0f32, 1.0);
        assert!((k.k_fixed - 4.0).abs() < 1e-5);
    }
}
