//! Exactly solvable noise-observable models.
//!
//! Every sampled model is a binary `±1` observable, so one cell of raw data is a
//! single plus-count. [`MonomialBalanceModel`] has no observable at all: it
//! defines the MSE difference directly and is used to test the boundary and
//! fitting stack against known constants and remainders.

use rand::RngCore;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Leading-order constants a model declares for theory predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Declared<T> {
    /// Order of the leading unmitigated bias.
    pub p: u32,
    /// Variance exponent.
    pub q: T,
    /// Variance level `nu` in `v(eps) ~ nu eps^q`.
    pub nu: Option<T>,
    /// Coefficient `A_p` of the leading unmitigated bias `A_p eps^p`.
    pub bias_coefficient: Option<T>,
    /// Squared-bias improvement constant, for models that define it directly.
    pub d_p: Option<T>,
    /// Variance penalty constant, for models that define it directly.
    pub k_q: Option<T>,
}

/// A noise-observable model: exact mean curve, exact single-shot variance and a
/// finite-shot sampler on the domain `[0, eps_max]`.
pub trait NoiseObservableModel<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Rejects `eps` outside the valid domain. Never clamps.
    fn check_domain(&self, eps: T) -> Result<()>;

    /// Upper end of the valid domain (may be infinite).
    fn eps_max(&self) -> T;

    fn mean(&self, eps: T) -> Result<T>;

    fn variance(&self, eps: T) -> Result<T>;

    /// Ideal value `mu(0)`, the reference for every bias and squared error.
    fn ideal_mean(&self) -> T;

    fn declared(&self) -> Declared<T>;

    fn is_binary(&self) -> bool {
        true
    }

    /// Direct MSE-difference model, if this is one.
    fn as_monomial(&self) -> Option<&MonomialBalanceModel<T>> {
        None
    }

    /// Draws the number of `+1` outcomes in `shots` independent shots at `eps`.
    fn sample_counts(&self, eps: T, shots: u64, rng: &mut dyn RngCore) -> Result<u64> {
        if !self.is_binary() {
            return Err(Error::NoSampler);
        }
        if shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        let mu = self.mean(eps)?.as_f64();
        let p_plus = ((1.0 + mu) / 2.0).clamp(0.0, 1.0);
        Ok(binomial(shots, p_plus, rng))
    }
}

/// Binomial draw that handles the degenerate endpoints without touching the RNG.
pub(crate) fn binomial(shots: u64, p: f64, rng: &mut dyn RngCore) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        shots
    } else {
        Binomial::new(shots, p)
            .expect("probability in (0, 1)")
            .sample(rng)
    }
}

fn require_nonneg<T: Real>(eps: T) -> Result<()> {
    if eps.is_nan() || eps < T::zero() {
        return Err(Error::Domain {
            eps: eps.as_f64(),
            bound: "eps must be >= 0".into(),
        });
    }
    Ok(())
}

/// `mu(eps) = mu0 + alpha eps`: nonzero ideal variance, `q = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBiasBinary<T> {
    pub mu0: T,
    pub alpha: T,
}

impl<T: Real> LinearBiasBinary<T> {
    pub fn new(mu0: T, alpha: T) -> Result<Self> {
        if !(mu0 > -T::one() && mu0 < T::one()) {
            return Err(Error::invalid("mu0 must lie in (-1, 1)"));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(Self { mu0, alpha })
    }
}

impl<T: Real> NoiseObservableModel<T> for LinearBiasBinary<T> {
    fn name(&self) -> &'static str {
        "linear_bias_binary"
    }

    fn eps_max(&self) -> T {
        if self.alpha == T::zero() {
            T::infinity()
        } else {
            (self.alpha.signum() - self.mu0) / self.alpha
        }
    }

    fn check_domain(&self, eps: T) -> Result<()> {
        require_nonneg(eps)?;
        if (self.mu0 + self.alpha * eps).abs() > T::one() {
            return Err(Error::Domain {
                eps: eps.as_f64(),
                bound: format!("|mu0 + alpha*eps| <= 1 requires eps <= {}", self.eps_max()),
            });
        }
        Ok(())
    }

    fn mean(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        Ok(self.mu0 + self.alpha * eps)
    }

    fn variance(&self, eps: T) -> Result<T> {
        let m = self.mean(eps)?;
        Ok(T::one() - m * m)
    }

    fn ideal_mean(&self) -> T {
        self.mu0
    }

    fn declared(&self) -> Declared<T> {
        Declared {
            p: 1,
            q: T::zero(),
            nu: Some(T::one() - self.mu0 * self.mu0),
            bias_coefficient: Some(self.alpha),
            d_p: None,
            k_q: None,
        }
    }
}

/// `mu(eps) = 1 - kappa eps`: deterministic ideal limit, `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicLimitBinary<T> {
    pub kappa: T,
}

impl<T: Real> DeterministicLimitBinary<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if !(kappa > T::zero() && kappa.is_finite()) {
            return Err(Error::invalid("kappa must be positive"));
        }
        Ok(Self { kappa })
    }
}

impl<T: Real> NoiseObservableModel<T> for DeterministicLimitBinary<T> {
    fn name(&self) -> &'static str {
        "deterministic_limit_binary"
    }

    fn eps_max(&self) -> T {
        T::lit(2.0) / self.kappa
    }

    fn check_domain(&self, eps: T) -> Result<()> {
        require_nonneg(eps)?;
        if self.kappa * eps > T::lit(2.0) {
            return Err(Error::Domain {
                eps: eps.as_f64(),
                bound: format!("mean >= -1 requires eps <= {}", self.eps_max()),
            });
        }
        Ok(())
    }

    fn mean(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        Ok(T::one() - self.kappa * eps)
    }

    fn variance(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        let k = self.kappa;
        Ok(T::lit(2.0) * k * eps - k * k * eps * eps)
    }

    fn ideal_mean(&self) -> T {
        T::one()
    }

    fn declared(&self) -> Declared<T> {
        Declared {
            p: 1,
            q: T::one(),
            nu: Some(T::lit(2.0) * self.kappa),
            bias_coefficient: Some(-self.kappa),
            d_p: None,
            k_q: None,
        }
    }
}

/// Pauli-string expectation under a product contraction:
/// `mu(eps) = (1 - gamma eps)^ell`, valid for `gamma eps < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductContractionString<T> {
    pub gamma: T,
    pub ell: u32,
}

impl<T: Real> ProductContractionString<T> {
    pub fn new(gamma: T, ell: u32) -> Result<Self> {
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if ell == 0 {
            return Err(Error::invalid("ell must be a positive integer"));
        }
        Ok(Self { gamma, ell })
    }

    /// Leading leakage rate `kappa = gamma ell`.
    pub fn kappa(&self) -> T {
        self.gamma * T::lit(self.ell as f64)
    }
}

impl<T: Real> NoiseObservableModel<T> for ProductContractionString<T> {
    fn name(&self) -> &'static str {
        "product_contraction_string"
    }

    fn eps_max(&self) -> T {
        T::one() / self.gamma
    }

    fn check_domain(&self, eps: T) -> Result<()> {
        require_nonneg(eps)?;
        if self.gamma * eps >= T::one() {
            return Err(Error::Domain {
                eps: eps.as_f64(),
                bound: format!("gamma*eps < 1 requires eps < {}", self.eps_max()),
            });
        }
        Ok(())
    }

    fn mean(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        Ok((T::one() - self.gamma * eps).powi(self.ell as i32))
    }

    fn variance(&self, eps: T) -> Result<T> {
        let m = self.mean(eps)?;
        Ok(T::one() - m * m)
    }

    fn ideal_mean(&self) -> T {
        T::one()
    }

    fn declared(&self) -> Declared<T> {
        Declared {
            p: 1,
            q: T::one(),
            nu: Some(T::lit(2.0) * self.kappa()),
            bias_coefficient: Some(-self.kappa()),
            d_p: None,
            k_q: None,
        }
    }
}

/// `mu(eps) = sigma (1 - kappa eps^r)`: power-law leakage, `q = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLeakageBinary<T> {
    pub sigma: i8,
    pub kappa: T,
    pub r: T,
}

impl<T: Real> PowerLeakageBinary<T> {
    pub fn new(sigma: i8, kappa: T, r: T) -> Result<Self> {
        if sigma != 1 && sigma != -1 {
            return Err(Error::invalid("sigma must be +1 or -1"));
        }
        if !(kappa > T::zero() && kappa.is_finite()) {
            return Err(Error::invalid("kappa must be positive"));
        }
        if !(r > T::zero() && r.is_finite()) {
            return Err(Error::invalid("r must be positive"));
        }
        Ok(Self { sigma, kappa, r })
    }

    fn sign(&self) -> T {
        T::lit(self.sigma as f64)
    }
}

impl<T: Real> NoiseObservableModel<T> for PowerLeakageBinary<T> {
    fn name(&self) -> &'static str {
        "power_leakage_binary"
    }

    fn eps_max(&self) -> T {
        (T::lit(2.0) / self.kappa).powf(T::one() / self.r)
    }

    fn check_domain(&self, eps: T) -> Result<()> {
        require_nonneg(eps)?;
        if self.kappa * eps.powf(self.r) > T::lit(2.0) {
            return Err(Error::Domain {
                eps: eps.as_f64(),
                bound: format!("kappa*eps^r <= 2 requires eps <= {}", self.eps_max()),
            });
        }
        Ok(())
    }

    fn mean(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        Ok(self.sign() * (T::one() - self.kappa * eps.powf(self.r)))
    }

    fn variance(&self, eps: T) -> Result<T> {
        self.check_domain(eps)?;
        let leak = self.kappa * eps.powf(self.r);
        Ok(T::lit(2.0) * leak - leak * leak)
    }

    fn ideal_mean(&self) -> T {
        self.sign()
    }

    /// Bias order is `r` when `r` is an integer and 0 (undeclared) otherwise.
    fn declared(&self) -> Declared<T> {
        let p = if self.r.fract() == T::zero() {
            self.r.to_u32().unwrap_or(0)
        } else {
            0
        };
        Declared {
            p,
            q: self.r,
            nu: Some(T::lit(2.0) * self.kappa),
            bias_coefficient: Some(-self.sign() * self.kappa),
            d_p: None,
            k_q: None,
        }
    }
}

/// Direct leading-balance model:
/// `delta(eps, B) = D eps^(2p) - K eps^q / B + L_b eps^(2p+delta_b) + L_v eps^(q+delta_v) / B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonomialBalanceModel<T> {
    pub p: u32,
    pub q: T,
    pub d_p: T,
    pub k_q: T,
    pub delta_b: Option<T>,
    pub delta_v: Option<T>,
    pub l_b: Option<T>,
    pub l_v: Option<T>,
}

impl<T: Real> MonomialBalanceModel<T> {
    pub fn new(p: u32, q: T, d_p: T, k_q: T) -> Result<Self> {
        if p < 1 {
            return Err(Error::invalid("p must be >= 1"));
        }
        if !(q >= T::zero()) {
            return Err(Error::invalid("q must be >= 0"));
        }
        if !(d_p > T::zero() && k_q > T::zero()) {
            return Err(Error::invalid("D_p and K_q must be positive"));
        }
        Ok(Self {
            p,
            q,
            d_p,
            k_q,
            delta_b: None,
            delta_v: None,
            l_b: None,
            l_v: None,
        })
    }

    /// Adds the remainder terms `L_b eps^(2p+delta_b)` and `L_v eps^(q+delta_v)/B`.
    pub fn with_remainders(mut self, l_b: T, delta_b: T, l_v: T, delta_v: T) -> Result<Self> {
        if !(l_b >= T::zero() && l_v >= T::zero()) {
            return Err(Error::invalid("remainder amplitudes must be >= 0"));
        }
        if !(delta_b > T::zero() && delta_v > T::zero()) {
            return Err(Error::invalid("remainder exponents must be > 0"));
        }
        self.l_b = Some(l_b);
        self.delta_b = Some(delta_b);
        self.l_v = Some(l_v);
        self.delta_v = Some(delta_v);
        Ok(self)
    }

    /// Remainder exponents `(delta_b, delta_v)` when both are set.
    pub fn remainder_exponents(&self) -> Option<(T, T)> {
        Some((self.delta_b?, self.delta_v?))
    }

    pub fn delta(&self, eps: T, budget: T) -> Result<T> {
        require_nonneg(eps)?;
        if !(budget > T::zero()) {
            return Err(Error::invalid("budget must be positive"));
        }
        let two_p = T::lit(2.0 * self.p as f64);
        let mut d = self.d_p * eps.powf(two_p) - self.k_q * eps.powf(self.q) / budget;
        if let (Some(l), Some(db)) = (self.l_b, self.delta_b) {
            d = d + l * eps.powf(two_p + db);
        }
        if let (Some(l), Some(dv)) = (self.l_v, self.delta_v) {
            d = d + l * eps.powf(self.q + dv) / budget;
        }
        Ok(d)
    }
}

impl<T: Real> NoiseObservableModel<T> for MonomialBalanceModel<T> {
    fn name(&self) -> &'static str {
        "monomial_balance"
    }

    fn eps_max(&self) -> T {
        T::infinity()
    }

    fn check_domain(&self, eps: T) -> Result<()> {
        require_nonneg(eps)
    }

    fn mean(&self, _eps: T) -> Result<T> {
        Err(Error::NoCurve)
    }

    fn variance(&self, _eps: T) -> Result<T> {
        Err(Error::NoCurve)
    }

    fn ideal_mean(&self) -> T {
        T::zero()
    }

    fn declared(&self) -> Declared<T> {
        Declared {
            p: self.p,
            q: self.q,
            nu: None,
            bias_coefficient: None,
            d_p: Some(self.d_p),
            k_q: Some(self.k_q),
        }
    }

    fn is_binary(&self) -> bool {
        false
    }

    fn as_monomial(&self) -> Option<&MonomialBalanceModel<T>> {
        Some(self)
    }

    fn sample_counts(&self, _eps: T, _shots: u64, _rng: &mut dyn RngCore) -> Result<u64> {
        Err(Error::NoSampler)
    }
}

/// Any model, as named in an experiment configuration (`type = "..."`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnyModel<T> {
    LinearBiasBinary(LinearBiasBinary<T>),
    DeterministicLimitBinary(DeterministicLimitBinary<T>),
    ProductContractionString(ProductContractionString<T>),
    PowerLeakageBinary(PowerLeakageBinary<T>),
    MonomialBalance(MonomialBalanceModel<T>),
}

impl<T: Real> AnyModel<T> {
    /// Re-runs the constructor checks (deserialization bypasses them).
    pub fn validate(self) -> Result<Self> {
        Ok(match self {
            AnyModel::LinearBiasBinary(m) => LinearBiasBinary::new(m.mu0, m.alpha)?.into(),
            AnyModel::DeterministicLimitBinary(m) => DeterministicLimitBinary::new(m.kappa)?.into(),
            AnyModel::ProductContractionString(m) => {
                ProductContractionString::new(m.gamma, m.ell)?.into()
            }
            AnyModel::PowerLeakageBinary(m) => PowerLeakageBinary::new(m.sigma, m.kappa, m.r)?.into(),
            AnyModel::MonomialBalance(m) => {
                let base = MonomialBalanceModel::new(m.p, m.q, m.d_p, m.k_q)?;
                match (m.l_b, m.delta_b, m.l_v, m.delta_v) {
                    (None, None, None, None) => base.into(),
                    (lb, db, lv, dv) => base
                        .with_remainders(
                            lb.unwrap_or(T::zero()),
                            db.unwrap_or(T::one()),
                            lv.unwrap_or(T::zero()),
                            dv.unwrap_or(T::one()),
                        )?
                        .into(),
                }
            }
        })
    }

    pub fn as_dyn(&self) -> &dyn NoiseObservableModel<T> {
        match self {
            AnyModel::LinearBiasBinary(m) => m,
            AnyModel::DeterministicLimitBinary(m) => m,
            AnyModel::ProductContractionString(m) => m,
            AnyModel::PowerLeakageBinary(m) => m,
            AnyModel::MonomialBalance(m) => m,
        }
    }
}

macro_rules! impl_from_model {
    ($($ty:ident => $variant:ident),*) => {
        $(impl<T> From<$ty<T>> for AnyModel<T> {
            fn from(m: $ty<T>) -> Self {
                AnyModel::$variant(m)
            }
        })*
    };
}

impl_from_model!(
    LinearBiasBinary => LinearBiasBinary,
    DeterministicLimitBinary => DeterministicLimitBinary,
    ProductContractionString => ProductContractionString,
    PowerLeakageBinary => PowerLeakageBinary,
    MonomialBalanceModel => MonomialBalance
);
