//! Raw-count bootstrap.
//!
//! Every replicate redraws each cell's plus count from
//! `Binomial(shots, plus_count / shots)` and reruns the whole estimation
//! pipeline: deltas, crossings, boundary fit, `q_hat`, `alpha_hat` and the
//! plug-in constant.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{find_crossings, CrossingEstimate};
use crate::error::{Error, Result};
use crate::fits::{
    constant_check, fit_bias, fit_loglog, fit_variance_exponent, BiasFit, BoundaryFit,
    VarianceExponentFit,
};
use crate::models::binomial;
use crate::mse::{CountTable, DeltaCurve};
use crate::rng::replicate_stream;
use crate::rules::{build_rule, Allocation};

pub const MIN_REPLICATES: usize = 100;
pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    SObs,
    CFit,
    QHat,
    AlphaHat,
    CHat,
    /// Crossing at the given budget index.
    EpsStar(u32),
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::SObs => f.write_str("s_obs"),
            Statistic::CFit => f.write_str("c_fit"),
            Statistic::QHat => f.write_str("q_hat"),
            Statistic::AlphaHat => f.write_str("alpha_hat"),
            Statistic::CHat => f.write_str("c_hat"),
            Statistic::EpsStar(b) => write!(f, "eps_star[{b}]"),
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "s_obs" => Statistic::SObs,
            "c_fit" => Statistic::CFit,
            "q_hat" => Statistic::QHat,
            "alpha_hat" => Statistic::AlphaHat,
            "c_hat" => Statistic::CHat,
            other => {
                let idx = other
                    .strip_prefix("eps_star[")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown statistic '{other}'")))?;
                Statistic::EpsStar(idx)
            }
        })
    }
}

/// Regression windows, fixed before any count is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitWindows {
    pub variance: Option<(f64, f64)>,
    pub bias: Option<(f64, f64)>,
    #[serde(default = "one")]
    pub bias_power: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub n_rep: usize,
    pub level: f64,
    pub seed: u64,
    pub statistics: Vec<Statistic>,
    pub windows: FitWindows,
}

impl BootstrapSpec {
    pub fn new(n_rep: usize, seed: u64, statistics: Vec<Statistic>) -> Self {
        BootstrapSpec {
            n_rep,
            level: DEFAULT_LEVEL,
            seed,
            statistics,
            windows: FitWindows::default(),
        }
    }

    pub fn with_windows(mut self, windows: FitWindows) -> Self {
        self.windows = windows;
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_rep < MIN_REPLICATES {
            return Err(Error::invalid(format!(
                "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
                self.n_rep
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("confidence level must lie in (0, 1)"));
        }
        if self.statistics.is_empty() {
            return Err(Error::invalid("no bootstrap statistics requested"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub statistic: String,
    /// Value on the observed counts, if defined there.
    pub point: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_rep: usize,
    pub level: f64,
    pub missing_fraction: f64,
}

impl BootstrapResult {
    pub fn contains(&self, x: f64) -> bool {
        matches!((self.ci_lo, self.ci_hi), (Some(lo), Some(hi)) if lo <= x && x <= hi)
    }

    pub fn overlaps(&self, other: &BootstrapResult) -> bool {
        match (self.ci_lo, self.ci_hi, other.ci_lo, other.ci_hi) {
            (Some(a), Some(b), Some(c), Some(d)) => a <= d && c <= b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub results: Vec<BootstrapResult>,
    pub n_rep: usize,
    /// Replicates in which every budget was censored.
    pub all_censored: usize,
}

impl BootstrapReport {
    pub fn get(&self, statistic: Statistic) -> Option<&BootstrapResult> {
        let name = statistic.to_string();
        self.results.iter().find(|r| r.statistic == name)
    }
}

/// Everything the pipeline estimates from one set of counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub curves: Vec<DeltaCurve<f64>>,
    pub crossings: Vec<CrossingEstimate<f64>>,
    pub boundary: Option<BoundaryFit<f64>>,
    pub variance: Option<VarianceExponentFit<f64>>,
    pub bias: Option<BiasFit<f64>>,
    pub c_hat: Option<f64>,
}

impl PipelineEstimate {
    pub fn all_censored(&self) -> bool {
        self.crossings.iter().all(|c| !c.is_crossed())
    }

    pub fn value(&self, statistic: Statistic) -> Option<f64> {
        match statistic {
            Statistic::SObs => self.boundary.as_ref().map(|f| f.slope),
            Statistic::CFit => self.boundary.as_ref().map(|f| f.c_fit()),
            Statistic::QHat => self.variance.as_ref().map(|f| f.q_hat),
            Statistic::AlphaHat => self.bias.as_ref().map(|f| f.alpha_hat),
            Statistic::CHat => self.c_hat,
            Statistic::EpsStar(b) => self
                .crossings
                .get(b as usize)
                .filter(|c| c.is_crossed())
                .and_then(|c| c.eps_star),
        }
        .filter(|v| v.is_finite())
    }
}

/// Runs the estimation pipeline on the stored counts.
pub fn analyze_counts(table: &CountTable, windows: &FitWindows) -> Result<PipelineEstimate> {
    table.validate()?;
    analyze_with_counts(table, &table.plus_counts(), windows)
}

fn analyze_with_counts(
    table: &CountTable,
    plus: &[u64],
    windows: &FitWindows,
) -> Result<PipelineEstimate> {
    let curves = table.deltas_with_counts(plus);
    let crossings = find_crossings(&curves)?;
    let boundary = fit_loglog(&crossings).ok();
    let needs_summary = windows.variance.is_some() || windows.bias.is_some();
    let summary = if needs_summary {
        table.noisy_summary_with_counts(plus)
    } else {
        Vec::new()
    };
    let variance = windows.variance.and_then(|w| {
        let samples: Vec<(f64, f64)> = summary.iter().map(|s| (s.eps, s.variance)).collect();
        fit_variance_exponent(&samples, w).ok()
    });
    let bias = windows.bias.and_then(|w| {
        let samples: Vec<(f64, f64)> = summary.iter().map(|s| (s.eps, s.mean)).collect();
        fit_bias(&samples, table.header.ideal_mean, w, windows.bias_power).ok()
    });
    let c_hat = match (&boundary, &variance, &bias) {
        (Some(f), Some(v), Some(b)) if table.header.allocation == "uniform" => {
            build_rule(&table.header.scales, Allocation::Uniform)
                .and_then(|rule| constant_check(f, v, b, &rule, None))
                .ok()
                .map(|c| c.c_hat_plugin)
        }
        _ => None,
    };
    Ok(PipelineEstimate {
        curves,
        crossings,
        boundary,
        variance,
        bias,
        c_hat,
    })
}

/// Redraws every cell from its own observed proportion.
pub fn resample_counts(table: &CountTable, seed: u64, replicate: u64) -> Vec<u64> {
    let mut rng = replicate_stream(seed, replicate);
    table
        .cells
        .iter()
        .map(|c| binomial(c.shots, c.plus_count as f64 / c.shots as f64, &mut rng))
        .collect()
}

/// Percentile bootstrap of the requested statistics.
pub fn bootstrap_pipeline(table: &CountTable, spec: &BootstrapSpec) -> Result<BootstrapReport> {
    spec.validate()?;
    let observed = analyze_counts(table, &spec.windows)?;
    let replicates: Vec<(bool, Vec<Option<f64>>)> = (0..spec.n_rep)
        .into_par_iter()
        .map(|i| {
            let plus = resample_counts(table, spec.seed, i as u64);
            let est = analyze_with_counts(table, &plus, &spec.windows)?;
            let values = spec.statistics.iter().map(|&s| est.value(s)).collect();
            Ok((est.all_censored(), values))
        })
        .collect::<Result<_>>()?;

    let all_censored = replicates.iter().filter(|r| r.0).count();
    let results = spec
        .statistics
        .iter()
        .enumerate()
        .map(|(k, &stat)| {
            let mut values: Vec<f64> = replicates.iter().filter_map(|r| r.1[k]).collect();
            values.sort_by(f64::total_cmp);
            let missing = spec.n_rep - values.len();
            let alpha = (1.0 - spec.level) / 2.0;
            let (ci_lo, ci_hi) = if values.is_empty() {
                (None, None)
            } else {
                (
                    Some(quantile_sorted(&values, alpha)),
                    Some(quantile_sorted(&values, 1.0 - alpha)),
                )
            };
            BootstrapResult {
                statistic: stat.to_string(),
                point: observed.value(stat),
                ci_lo,
                ci_hi,
                n_rep: spec.n_rep,
                level: spec.level,
                missing_fraction: missing as f64 / spec.n_rep as f64,
            }
        })
        .collect();
    Ok(BootstrapReport {
        results,
        n_rep: spec.n_rep,
        all_censored,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DeterministicLimitBinary;
    use crate::mse::mc_sweep;
    use crate::rules::RuleSpec;

    fn small_table(seed: u64) -> CountTable {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let rule = RuleSpec::<f64>::uniform(&[1.0, 3.0]).unwrap();
        let budgets = [1000u64, 10_000, 100_000];
        let grids: Vec<Vec<f64>> = budgets
            .iter()
            .map(|&b| (0..8).map(|i| 2.5 / b as f64 * 1.5f64.powi(i)).collect())
            .collect();
        mc_sweep(&m, &rule, &budgets, &grids, 20, seed).unwrap().1
    }

    #[test]
    fn statistic_names_round_trip() {
        for s in [Statistic::SObs, Statistic::CFit, Statistic::QHat, Statistic::AlphaHat, Statistic::CHat, Statistic::EpsStar(3)] {
            assert_eq!(s.to_string().parse::<Statistic>().unwrap(), s);
        }
        assert!("eps_star[x]".parse::<Statistic>().is_err());
    }

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.625), 3.5);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
    }

    #[test]
    fn too_few_replicates() {
        let t = small_table(1);
        let spec = BootstrapSpec::new(50, 1, vec![Statistic::SObs]);
        assert!(bootstrap_pipeline(&t, &spec).is_err());
    }

    #[test]
    fn degenerate_counts_give_zero_width() {
        let mut t = small_table(2);
        for c in &mut t.cells {
            c.plus_count = c.shots;
        }
        let spec = BootstrapSpec::new(100, 3, vec![Statistic::SObs, Statistic::EpsStar(0)]);
        let rep = bootstrap_pipeline(&t, &spec).unwrap();
        assert_eq!(rep.all_censored, 100);
        for r in &rep.results {
            assert_eq!(r.missing_fraction, 1.0);
        }
        let first = resample_counts(&t, 3, 0);
        assert_eq!(first, resample_counts(&t, 3, 99));
        assert_eq!(first, t.plus_counts());
    }

    #[test]
    fn labels_are_preserved() {
        let mut t = small_table(4);
        // Sentinel proportions: each cell is either all-plus or all-minus.
        for (i, c) in t.cells.iter_mut().enumerate() {
            c.plus_count = if i % 3 == 0 { c.shots } else { 0 };
        }
        for rep in 0..5 {
            let plus = resample_counts(&t, 9, rep);
            for (c, &k) in t.cells.iter().zip(&plus) {
                assert_eq!(k, c.plus_count);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let t = small_table(5);
        let spec = BootstrapSpec::new(100, 11, vec![Statistic::SObs, Statistic::CFit]);
        let a = bootstrap_pipeline(&t, &spec).unwrap();
        let b = bootstrap_pipeline(&t, &spec).unwrap();
        assert_eq!(a, b);
        for r in &a.results {
            if let (Some(lo), Some(hi)) = (r.ci_lo, r.ci_hi) {
                assert!(lo <= hi);
            }
        }
    }
}
