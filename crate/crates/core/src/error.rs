use std::path::PathBuf;

use thiserror::Error;

use crate::losses::LossBreakdown;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("failed to parse configuration: {0}")]
    ConfigParse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value produced by `{op}` during the forward pass")]
    NonFinite { op: &'static str },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("stepped an episode that already finished")]
    EpisodeDone,

    #[error("need ≥ 2 grid points, got {0}")]
    TooFewPoints(usize),

    #[error("grid bounds must satisfy 0 < lo < hi (lo={lo}, hi={hi})")]
    GridBounds { lo: f64, hi: f64 },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("ensemble size {0} is not a perfect square")]
    NotSquare(usize),

    #[error("reports do not share the same perturbation grid")]
    MismatchedGrids,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "non-finite loss at step {step}, member {member}: total={} nll={} contrastive={} l2={} params={params:?}",
        breakdown.total, breakdown.nll_term, breakdown.contrastive_term, breakdown.l2_term
    )]
    NonFiniteLoss {
        step: usize,
        member: usize,
        breakdown: LossBreakdown,
        params: Vec<f64>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
