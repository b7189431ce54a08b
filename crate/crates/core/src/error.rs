use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiracError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ambient dimension {0} is odd; a Dirac fiber lives in R^n x R^n")]
    OddDimension(usize),

    #[error("matrix is not skew-symmetric (|A + A^T| = {0:.3e})")]
    NotSkew(f64),

    #[error("linear map has rank {rank}, full row rank {rows} required")]
    RankDeficient { rank: usize, rows: usize },

    #[error("subspace is not a Dirac fiber: dim {dim} (want {n}), isotropy residual {isotropy:.3e}")]
    NotDirac { dim: usize, n: usize, isotropy: f64 },

    #[error("not index 1 at x = {point:?} (condition number {condition:.3e})")]
    NotIndexOne { point: Vec<f64>, condition: f64 },

    #[error("multiplier solve failed at t = {time}: {source}")]
    IntegrationAborted {
        time: f64,
        state: Vec<f64>,
        #[source]
        source: Box<DiracError>,
    },

    #[error("fiber dimension jumps from {dim_a} at {point_a:?} to {dim_b} at {point_b:?}")]
    DimensionJump {
        point_a: Vec<f64>,
        dim_a: usize,
        point_b: Vec<f64>,
        dim_b: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("group action has no flow; orbit sampling is unavailable")]
    MissingFlow,

    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DiracError>;
