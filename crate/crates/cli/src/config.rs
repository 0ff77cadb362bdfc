//! Experiment configuration: a TOML file with flat sections, overridable by
//! command-line flags.
//!
//! ```toml
//! [model]
//! type = "deterministic_limit_binary"
//! kappa = 1.0
//!
//! [rule]
//! scales = [1.0, 3.0]
//! alloc = "uniform"
//!
//! [grid]
//! mode = "auto"
//! lo_factor = 0.5
//! hi_factor = 2.0
//! points_per_decade = 40
//!
//! [budgets]
//! values = [1e4, 1e5, 1e6, 1e7]
//!
//! [engine]
//! kind = "exact"
//!
//! [windows]
//! variance = [1e-4, 1e-2]
//! bias = [1e-4, 1e-2]
//!
//! [seed]
//! master = 7
//! ```

use std::path::{Path, PathBuf};

use helpharm::boundary::{auto_window, geometric_grid};
use helpharm::resample::{FitWindows, DEFAULT_LEVEL, DEFAULT_REPLICATES};
use helpharm::{theoretical_boundary_spec, Model, Spec, Statistic};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<Model>,
    pub rule: Option<RuleConfig>,
    pub grid: Option<GridConfig>,
    pub budgets: Option<BudgetConfig>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub windows: WindowConfig,
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default)]
    pub seed: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// `none = true` selects the unmitigated estimator on both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    #[serde(default)]
    pub scales: Vec<f64>,
    #[serde(default = "uniform")]
    pub alloc: toml::Value,
    #[serde(default)]
    pub none: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            scales: Vec::new(),
            alloc: uniform(),
            none: false,
        }
    }
}

fn uniform() -> toml::Value {
    toml::Value::String("uniform".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    #[default]
    Explicit,
    Geometric,
    Auto,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub mode: GridMode,
    /// Explicit grid shared by every budget.
    pub eps: Option<Vec<f64>>,
    /// Geometric grid bounds.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Auto window factors around the theory guess `C B^-r`.
    pub lo_factor: Option<f64>,
    pub hi_factor: Option<f64>,
    pub points_per_decade: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub kind: EngineKind,
    pub replicates: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub variance: Option<(f64, f64)>,
    pub bias: Option<(f64, f64)>,
    pub bias_power: Option<u32>,
    /// Grid points used when a window is fitted on an exact model curve.
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_rep: Option<usize>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub statistics: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Flag values that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rule: Option<String>,
    pub alloc: Option<String>,
    pub budgets: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub engine: Option<EngineKind>,
    pub replicates: Option<u32>,
    pub seed: Option<u64>,
    pub n_rep: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(m) = cfg.model {
            m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(r) = &o.rule {
            let rule = self.rule.get_or_insert_with(Default::default);
            if r.trim() == "none" {
                rule.none = true;
                rule.scales.clear();
            } else {
                rule.none = false;
                rule.scales = parse_list(r)?;
            }
        }
        if let Some(a) = &o.alloc {
            let rule = self.rule.get_or_insert_with(Default::default);
            rule.alloc = match a.as_str() {
                "uniform" | "optimal" => toml::Value::String(a.clone()),
                list => toml::Value::Array(
                    parse_list(list)?.into_iter().map(toml::Value::Float).collect(),
                ),
            };
        }
        if let Some(b) = &o.budgets {
            self.budgets = Some(BudgetConfig { values: b.clone() });
        }
        if let Some(e) = &o.eps {
            self.grid = Some(GridConfig {
                mode: GridMode::Explicit,
                eps: Some(e.clone()),
                ..Default::default()
            });
        }
        if let Some(k) = o.engine {
            self.engine.kind = k;
        }
        if let Some(r) = o.replicates {
            self.engine.replicates = Some(r);
        }
        if let Some(s) = o.seed {
            self.seed.master = Some(s);
        }
        if let Some(n) = o.n_rep {
            self.bootstrap.get_or_insert_with(Default::default).n_rep = Some(n);
        }
        if let Some(d) = &o.out {
            self.output.dir = Some(d.clone());
        }
        Ok(())
    }

    /// Checks that must hold before any computation starts.
    pub fn check(&self) -> Result<(), CliError> {
        if self.engine.kind == EngineKind::MonteCarlo {
            if self.seed.master.is_none() {
                return Err(CliError::Config(
                    "a master seed ([seed] master or --seed) is required for monte_carlo".into(),
                ));
            }
            if let Some(r) = self.engine.replicates {
                if r < 2 {
                    return Err(CliError::Config("monte_carlo needs replicates >= 2".into()));
                }
            }
        }
        if self.bootstrap.is_some() && self.engine.kind != EngineKind::MonteCarlo {
            return Err(CliError::Config("bootstrap requires the monte_carlo engine".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, CliError> {
        self.model
            .ok_or_else(|| CliError::Config("missing [model] section".into()))
    }

    /// `None` for the unmitigated comparison (`rule = none`).
    pub fn rule_spec(&self) -> Result<Option<Spec>, CliError> {
        let rule = self
            .rule
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [rule] section".into()))?;
        if rule.none {
            return Ok(None);
        }
        #[derive(Serialize)]
        struct Repr<'a> {
            scales: &'a [f64],
            alloc: &'a toml::Value,
        }
        let value = toml::Value::try_from(Repr {
            scales: &rule.scales,
            alloc: &rule.alloc,
        })
        .map_err(|e| CliError::Config(e.to_string()))?;
        let spec: Spec = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        Ok(Some(spec))
    }

    pub fn budgets(&self) -> Result<Vec<f64>, CliError> {
        let b = self
            .budgets
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [budgets] section".into()))?;
        if b.values.is_empty() || b.values.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(CliError::Config("budgets must be positive and finite".into()));
        }
        for w in b.values.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CliError::Config("budgets must be strictly increasing".into()));
            }
        }
        Ok(b.values.clone())
    }

    /// Integer budgets for sampling.
    pub fn shot_budgets(&self) -> Result<Vec<u64>, CliError> {
        self.budgets()?
            .into_iter()
            .map(|b| {
                if b.fract() == 0.0 && b <= u64::MAX as f64 {
                    Ok(b as u64)
                } else {
                    Err(CliError::Config(format!("budget {b} is not a whole number of shots")))
                }
            })
            .collect()
    }

    /// One noise grid per budget.
    pub fn grids(&self, model: &Model, spec: Option<&Spec>, budgets: &[f64]) -> Result<Vec<Vec<f64>>, CliError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [grid] section".into()))?;
        let ppd = g.points_per_decade.unwrap_or(20);
        let grid = match g.mode {
            GridMode::Explicit => {
                let eps = g
                    .eps
                    .clone()
                    .ok_or_else(|| CliError::Config("explicit grid needs eps = [..]".into()))?;
                if eps.is_empty() || eps.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(CliError::Config("eps grid must be strictly increasing".into()));
                }
                vec![eps; budgets.len()]
            }
            GridMode::Geometric => {
                let (lo, hi) = g
                    .lo
                    .zip(g.hi)
                    .ok_or_else(|| CliError::Config("geometric grid needs lo and hi".into()))?;
                vec![geometric_grid(lo, hi, ppd).map_err(|e| CliError::Config(e.to_string()))?; budgets.len()]
            }
            GridMode::Auto => {
                let spec = spec.ok_or_else(|| CliError::Config("auto grid needs a rule".into()))?;
                let report = theoretical_boundary_spec(model.as_dyn(), spec)?;
                let (lo, hi) = (g.lo_factor.unwrap_or(0.1), g.hi_factor.unwrap_or(10.0));
                budgets
                    .iter()
                    .map(|&b| auto_window(&report, b, lo, hi, ppd).map_err(CliError::from))
                    .collect::<Result<_, _>>()?
            }
        };
        Ok(grid)
    }

    pub fn fit_windows(&self) -> FitWindows {
        FitWindows {
            variance: self.windows.variance,
            bias: self.windows.bias,
            bias_power: self.windows.bias_power.unwrap_or(1),
        }
    }

    pub fn statistics(&self) -> Result<Vec<Statistic>, CliError> {
        let names = self
            .bootstrap
            .as_ref()
            .and_then(|b| b.statistics.clone())
            .unwrap_or_else(|| vec!["s_obs".into(), "c_fit".into()]);
        names
            .iter()
            .map(|n| n.parse().map_err(|e: helpharm::Error| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn n_rep(&self) -> usize {
        self.bootstrap.as_ref().and_then(|b| b.n_rep).unwrap_or(DEFAULT_REPLICATES)
    }

    pub fn level(&self) -> f64 {
        self.bootstrap.as_ref().and_then(|b| b.level).unwrap_or(DEFAULT_LEVEL)
    }

    pub fn bootstrap_seed(&self) -> u64 {
        self.bootstrap
            .as_ref()
            .and_then(|b| b.seed)
            .or(self.seed.master)
            .unwrap_or(0)
    }

    /// Canonical JSON of the resolved configuration, without the output location.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Pre-registration flags written into every output.
    pub fn prereg_flags(&self) -> Vec<(&'static str, String)> {
        let declared = |x: bool| if x { "declared" } else { "none" }.to_string();
        vec![
            ("prereg_grid", declared(self.grid.is_some())),
            ("prereg_windows", declared(self.windows.variance.is_some() || self.windows.bias.is_some())),
        ]
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("'{t}' is not a number")))
        })
        .collect()
}
