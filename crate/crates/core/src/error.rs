use thiserror::Error;

use crate::inference::ParamDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    #[error("truncated normal with loc={loc}, sd={sd} has no practical positive mass (gave up after {attempts} attempts)")]
    TruncationInfeasible { loc: f64, sd: f64, attempts: usize },

    #[error("no coefficient for {0}; reference-grid levels need an extension step before prediction")]
    MissingCoefficient(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sampler quality gate failed after {rounds} rounds: {message}")]
    Quality {
        rounds: usize,
        message: String,
        diagnostics: Vec<ParamDiagnostics>,
    },

    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    #[error("need at least {needed} replications for a uniformity band, got {got}")]
    InsufficientReplications { needed: usize, got: usize },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for failures that come from sampler quality gates, possibly
    /// wrapped with a replication index.
    pub fn is_quality_failure(&self) -> bool {
        match self {
            Error::Quality { .. } => true,
            Error::Replication { source, .. } => source.is_quality_failure(),
            _ => false,
        }
    }
}
