use std::fmt;

use crate::jtpc::GaussSeidelTrace;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the allocators, the harness and the config layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// Every user has zero rate (or zero weighted rate) in this frame, so any
    /// time split is optimal.
    #[error("degenerate frame: no user can carry traffic")]
    DegenerateFrame,

    /// No (sample, user) pair covered by the named constraint can absorb
    /// energy, e.g. every gain is zero.
    #[error("degenerate power budget ({0}): no sample can absorb energy")]
    DegenerateBudget(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("Gauss-Seidel iteration did not converge after {} iterations", .0.objective.len())]
    GaussSeidel(Box<GaussSeidelTrace>),

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("weight adaptation stopped at the iteration cap with spread {spread:.3e}")]
    FairnessCap { spread: f64, report: Box<crate::fairness::FairnessReport> },

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Config(ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A config diagnostic pointing at the offending line and key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(origin: &str, line: Option<usize>, field: Option<&str>, message: impl Into<String>) -> Self {
        Self { origin: origin.to_string(), line, field: field.map(str::to_string), message: message.into() }
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": field `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn at_frame(self, frame: u64) -> Self {
        Error::AtFrame { frame, source: Box::new(self) }
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParameter { .. } | Error::TooLarge(_))
    }
}
