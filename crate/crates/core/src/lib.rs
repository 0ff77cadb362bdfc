//! Finite-shot help-harm boundaries for fixed Richardson zero-noise
//! extrapolation.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`). Monte Carlo,
//! bootstrap and file I/O work in `f64`; the aliases below fix the scalar to
//! `f64` for everyday use.

pub mod boundary;
pub mod error;
pub mod fits;
pub mod io;
mod linalg;
pub mod models;
pub mod mse;
pub mod resample;
pub mod rng;
pub mod rules;
mod scalar;
pub mod validation;

pub use boundary::{
    budget_bracket, classify_regime, find_crossing, find_crossings, local_optimality_check,
    theoretical_boundary, theoretical_boundary_spec, CrossingEstimate, CrossingStatus, Regime,
    RegimeReport,
};
pub use error::{Error, Result};
pub use fits::{
    constant_check, fit_bias, fit_loglog, fit_variance_exponent, predict_slope, BiasFit,
    BoundaryFit, ConstantCheck, VarianceExponentFit,
};
pub use models::{
    AnyModel, Declared, DeterministicLimitBinary, LinearBiasBinary, MonomialBalanceModel,
    NoiseObservableModel, PowerLeakageBinary, ProductContractionString,
};
pub use mse::{
    exact_delta, exact_mse, mc_delta, mc_sweep, CountTable, DeltaCurve, DeltaPoint, MseBreakdown,
};
pub use resample::{bootstrap_pipeline, BootstrapResult, BootstrapSpec, Statistic};
pub use rules::{
    build_rule, leading_optimal_allocation, optimal_allocation, variance_penalty, Allocation, AllocationMode,
    PenaltyConstants, RichardsonRule, RuleSpec,
};
pub use scalar::Real;

pub type Rule = RichardsonRule<f64>;
pub type Spec = RuleSpec<f64>;
pub type Model = AnyModel<f64>;
pub type Curve = DeltaCurve<f64>;
pub type Crossing = CrossingEstimate<f64>;
pub type Report = RegimeReport<f64>;
pub type Fit = BoundaryFit<f64>;
pub type Penalties = PenaltyConstants<f64>;
