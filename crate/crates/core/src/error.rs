use thiserror::Error;

/// Errors produced by the simulator, the solvers and the trainers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place {placed} of {requested} base stations after {attempts} attempts")]
    PlacementFailed {
        requested: usize,
        placed: usize,
        attempts: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown node {node} (graph has {n_nodes} nodes)")]
    UnknownNode { node: usize, n_nodes: usize },

    #[error("instance too large for exhaustive search: {0} joint actions")]
    InstanceTooLarge(u128),

    #[error("degenerate calibration: reward variance is zero")]
    DegenerateCalibration,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    NotEnoughSamples { len: usize, batch: usize },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
