use thiserror::Error;

/// Errors raised by the model, pricers, simulators and the experiment runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite {what} at S={s}, t={t}")]
    NonFinite { what: &'static str, s: f64, t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error(
        "positivity window violated at S={s}, t={t}: |theta|*sqrt(dt)={ratio} >= 1 \
         (needs at least {min_steps} steps)"
    )]
    PositivityWindow {
        s: f64,
        t: f64,
        ratio: f64,
        min_steps: usize,
    },

    #[error("nonpositive stock after step {step:?}: S={s}, t={t}, eps={eps}")]
    NonpositiveStock {
        step: Option<usize>,
        s: f64,
        t: f64,
        eps: f64,
    },

    #[error("tree depth {depth} exceeds cap {cap}; use the Monte Carlo pricer")]
    TreeCapExceeded { depth: usize, cap: usize },

    #[error("all {0} paths were rejected")]
    AllPathsRejected(usize),

    #[error("unsupported method: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("reference unavailable: {0}")]
    ReferenceUnavailable(String),

    #[error("column `{column}` contains a non-finite value")]
    NonFiniteCell { column: String },

    #[error("config error{}{}: {msg}",
        line.map(|l| format!(" (line {l})")).unwrap_or_default(),
        key.as_ref().map(|k| format!(" [{k}]")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        key: Option<String>,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &str, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            value,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(line: Option<usize>, key: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            key: key.map(str::to_string),
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
