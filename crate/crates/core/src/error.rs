use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("stream is not sorted by timestamp at record {index}")]
    Unsorted { index: usize },

    #[error("unknown channel {channel} (channel count {channel_count})")]
    UnknownChannel { channel: u8, channel_count: u32 },

    #[error("corrupt time-tag file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("missing basis pair ({0}, {1})")]
    MissingBasisPair(String, String),

    #[error("fit did not converge after {iterations} iterations: {context}")]
    NonConvergence { iterations: usize, context: String },

    #[error("no maximum inside the sampled range")]
    NoMaximum,

    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParams(msg.into()))
}
