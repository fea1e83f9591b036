use thiserror::Error;

use crate::harness::StudyReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid spline index: {0}")]
    InvalidSplineIndex(String),

    #[error("spline combination is empty")]
    EmptyCombination,

    #[error("spline combination mixes levels or dimensions")]
    MixedCombination,

    #[error("singular normal equations: {basis} basis functions on {points} collocation points")]
    SingularFit { basis: usize, points: usize },

    #[error("unsupported activation in layer {layer}: {reason}")]
    UnsupportedActivation { layer: usize, reason: String },

    #[error(
        "problem `{name}` is inconsistent: max PDE residual {pde_residual:.3e}, max flux residual {flux_residual:.3e}"
    )]
    ProblemDefinition {
        name: String,
        pde_residual: f64,
        flux_residual: f64,
    },

    #[error("unknown problem `{0}` (expected `cosine` or `quadratic`)")]
    UnknownProblem(String),

    #[error("problem `{0}` has no analytic energy")]
    MissingAnalyticEnergy(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("training diverged at iteration {iteration}: non-finite {what} (parameter norm {parameter_norm:.3e})")]
    TrainingDiverged {
        iteration: usize,
        what: &'static str,
        parameter_norm: f64,
    },

    #[error("study aborted after {} completed cells: {source}", partial.cells.len())]
    StudyAborted {
        partial: Box<StudyReport>,
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
