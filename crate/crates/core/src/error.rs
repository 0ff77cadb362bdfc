use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("scale-power system is ill-conditioned (condition estimate {condition:.3e} > 1e12)")]
    IllConditioned { condition: f64 },

    #[error("noise level {eps} outside model domain: {bound}")]
    Domain { eps: f64, bound: String },

    #[error("scaled level lambda={scale} * eps={eps} outside model domain: {bound}")]
    ScaledDomain { eps: f64, scale: f64, bound: String },

    #[error("model has no sampler")]
    NoSampler,

    #[error("model exposes no mean/variance curve")]
    NoCurve,

    #[error("degenerate variance, allocation undefined")]
    DegenerateVariance,

    /// `D_p <= 0`: the rule does not improve the leading squared bias.
    #[error("no leading bias improvement (D_p = {d_p}); no shrinking lower boundary at this order")]
    NoBiasImprovement { d_p: f64 },

    #[error("slope prediction undefined: q = {q} is critical or supercritical")]
    SlopeUndefined { q: f64 },

    #[error("need at least {needed} crossed budgets, got {got} (censored budgets: {censored:?})")]
    InsufficientPoints {
        needed: usize,
        got: usize,
        censored: Vec<f64>,
    },

    #[error("no leading bias; constant undefined")]
    NoLeadingBias,

    #[error("nonpositive variance {variance} at eps={eps} inside regression window")]
    NonpositiveVariance { eps: f64, variance: f64 },

    #[error("budget {budget} too small for allocation: level {level} would receive zero shots")]
    ZeroCell { budget: u64, level: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by evaluating a model outside its valid noise domain.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain { .. } | Error::ScaledDomain { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
