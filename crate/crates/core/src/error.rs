use thiserror::Error;

/// Errors produced by the model, sampler and prediction routines.
#[derive(Debug, Error)]
pub enum MsgpError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid kernel parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: &'static str,
    },

    #[error("unknown kernel family `{0}`")]
    UnknownKernel(String),

    #[error("lattice sizes must be even and at least 2, got {0:?}")]
    InvalidLattice(Vec<usize>),

    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("spectral tables were built on different lattices")]
    LatticeMismatch,

    #[error(
        "spectral density has negative mass {value:.3e} at frequency {frequency:?} \
         (exceeds clamp tolerance {tolerance:.3e})"
    )]
    NegativeSpectralDensity {
        value: f64,
        frequency: Vec<f64>,
        tolerance: f64,
    },

    #[error("stick fraction v[{index}] = {value} is outside (0, 1)")]
    InvalidStickFraction { index: usize, value: f64 },

    #[error("invalid mixture configuration: {0}")]
    InvalidMixture(String),

    #[error("site {site:?} lies outside the lattice {sizes:?}")]
    SiteOutOfLattice { site: Vec<i64>, sizes: Vec<usize> },

    #[error("rows {first} and {second} map to the same lattice site {site:?} with different outcomes")]
    LatticeCollision {
        first: usize,
        second: usize,
        site: Vec<usize>,
    },

    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("covariance factorization failed (condition number estimate {condition:.3e})")]
    Factorization { condition: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("negative predictive variance {value:.3e} at target {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("non-finite log-likelihood at iteration {iteration}: {diagnostic}")]
    NonFinite { iteration: usize, diagnostic: String },

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MsgpError>;
