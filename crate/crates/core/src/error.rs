use std::path::PathBuf;

use thiserror::Error;

use crate::seqdata::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("sequence has zero probability under the model (first impossible step {step})")]
    ImpossibleSequence { step: usize },

    #[error("non-finite initial log-likelihood for model {0}")]
    NonFiniteInit(String),

    #[error("degenerate variance at flip {k}, lag {lag}: marginal is 0 or 1 but covariance is nonzero")]
    DegenerateVariance { k: usize, lag: usize },

    #[error("particle weights collapsed to zero at step {step}")]
    WeightCollapse { step: usize },

    #[error("no training sequences for label {0}")]
    EmptyLabel(Label),

    #[error("all model likelihoods are -inf for sequence {0}")]
    AllImpossible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Numerical failures map to CLI exit code 2; everything else is an input/usage error.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ImpossibleSequence { .. }
                | Error::NonFiniteInit(_)
                | Error::DegenerateVariance { .. }
                | Error::WeightCollapse { .. }
                | Error::AllImpossible(_)
        )
    }
}
