use std::io;

use thiserror::Error;

pub type Result<T, E = BmfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BmfError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown agent {0}")]
    UnknownAgent(usize),

    #[error("agent {0} is dead")]
    DeadAgent(usize),

    #[error("agent {agent}: action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },

    #[error("agent {0} is alive but has no action")]
    MissingAction(usize),

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("incompatible: {0}")]
    Incompatible(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("episode {episode} step {step}: {source}")]
    Run {
        episode: usize,
        step: usize,
        #[source]
        source: Box<BmfError>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BmfError {
    pub fn config(msg: impl Into<String>) -> Self {
        BmfError::InvalidConfig(msg.into())
    }

    pub(crate) fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        BmfError::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }

    pub fn at(self, episode: usize, step: usize) -> Self {
        BmfError::Run {
            episode,
            step,
            source: Box::new(self),
        }
    }
}
