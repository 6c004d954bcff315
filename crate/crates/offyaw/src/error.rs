use thiserror::Error;

/// Errors produced by scene queries, rasterization, metric evaluation and
/// refinement.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scene contains no lane points")]
    EmptyScene,

    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid raster spec: {0}")]
    InvalidRasterSpec(String),

    #[error("grayscale value 0 is the intersection sentinel, not a heading")]
    IntersectionSentinel,

    #[error("trajectory has fewer than 2 points")]
    DegenerateTrajectory,

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("scene has no drivable region")]
    MissingDrivableArea,

    #[error("batch shape mismatch: {0}")]
    BatchShapeMismatch(String),

    #[error("refinement diverged at step {step}: non-finite loss")]
    DivergedRefinement { step: usize },

    #[error("invalid prediction set: {0}")]
    InvalidPredictionSet(String),

    #[error("malformed PGM: {0}")]
    MalformedPgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
