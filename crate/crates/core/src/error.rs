use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("need at least 3 points, got {n}")]
    TooFewPoints { n: usize },

    #[error("dimension {d} is below the minimum of {min}")]
    DimensionTooSmall { d: usize, min: usize },

    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedInput { row: usize, expected: usize, found: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("row {row}: every other point coincides with it")]
    DegenerateRow { row: usize },

    #[error(
        "perplexity infeasible{}: target log-perplexity {target:.6} outside feasible band ({lo:.6}, {hi:.6})",
        row.map(|r| format!(" at row {r}")).unwrap_or_else(|| " for every row".into())
    )]
    PerplexityInfeasible {
        row: Option<usize>,
        target: f64,
        lo: f64,
        hi: f64,
    },

    #[error("row {row}: no bracket for the bandwidth after {steps} doublings")]
    BracketFailure { row: usize, steps: usize },

    #[error("root solver stalled with residual {residual:e} above tolerance {tol:e}")]
    SolverStalled { residual: f64, tol: f64 },

    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss or gradient became non-finite at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("Gaussian normalizer vanished at sigma {sigma:e}")]
    VanishingNormalizer { sigma: f64 },

    #[error("F does not change sign within the bandwidth bracket at x = {point:?}")]
    NoSignChange { point: Vec<f64> },

    #[error("n grid needs at least 3 strictly increasing entries, got {len}")]
    GridTooShort { len: usize },

    #[error("density integrates to {mass} over its support, expected 1")]
    DensityNotNormalized { mass: f64 },

    #[error("{0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
