use thiserror::Error;

/// Errors produced by registration, detection, and I/O routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("covariance matrix is not positive definite (eigenvalue {eigenvalue})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("spike filter domain violated at iteration {iter}: \
             sigma^2 I - sigma0^2 A A^T has eigenvalue {eigenvalue}")]
    SpikeFilterDomain { iter: usize, eigenvalue: f64 },

    #[error("singular transform matrix (det = {det})")]
    SingularTransform { det: f64 },

    #[error("zero-variance input to {metric}")]
    ZeroVariance { metric: &'static str },

    #[error("spike locations are rank deficient (singular values {s_max}, {s_min})")]
    RankDeficient { s_max: f64, s_min: f64 },

    #[error("spike locations are not centered (|mean| = {norm})")]
    NotCentered { norm: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("hierarchy structure error: {0}")]
    Hierarchy(String),

    #[error("no separating threshold for node {node}: \
             max success loss {max_success} >= min failure loss {min_failure}")]
    NoSeparatingThreshold {
        node: u32,
        max_success: f64,
        min_failure: f64,
    },

    #[error("empty support after thresholding for node {node}")]
    EmptySupport { node: u32 },

    #[error("solver error at iteration {iter}: {source}")]
    Solver {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("registration failed at node {node}, anchor ({i}, {j}): {source}")]
    Anchor {
        node: u32,
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
