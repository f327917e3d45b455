use thiserror::Error;

use crate::gallery::MatrixMarketError;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum StabError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    /// An active eigenvalue has `|x* y|` below the conditioning floor.
    #[error("eigenvalue {index} is ill-conditioned (x*y = {condition:.3e})")]
    IllConditioned { index: usize, condition: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The low-rank integrator truncated every singular value away.
    #[error("rank collapsed to zero during truncation")]
    DegenerateRank,

    /// The input is already delta-stable, so there is no descent direction.
    #[error("matrix is already delta-stable")]
    StableInput,

    #[error("stationarity measure undefined for a zero gradient")]
    UndefinedMeasure,

    #[error("no perturbation size up to {eps_max:.4e} stabilizes the matrix")]
    Unstabilizable { eps_max: f64 },

    #[error("structure pattern does not contain the input matrix: {0}")]
    StructureMismatch(String),

    #[error(transparent)]
    MatrixMarket(#[from] MatrixMarketError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StabError> = std::result::Result<T, E>;
