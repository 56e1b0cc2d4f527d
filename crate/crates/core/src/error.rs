use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice periods are linearly dependent (Gram determinant {0:e})")]
    DegenerateLattice(f64),
    #[error("bad grid {0:?}: every axis needs an even sample count >= 2")]
    BadGrid([usize; 3]),
    #[error("bad truncation: {0}")]
    BadTruncation(String),
    #[error("bad lattice: {0}")]
    BadLattice(String),
    #[error("fields live on different cells")]
    CellMismatch,
    #[error("density is not neutral: integral {charge:e} exceeds tolerance {tolerance:e}")]
    NonNeutral { charge: f64, tolerance: f64 },
    #[error("ion profile under-resolved: sigma {sigma} < {required} (twice the largest grid spacing)")]
    UnderResolved { sigma: f64, required: f64 },
    #[error("invalid ion species: {0}")]
    BadSpecies(String),
    #[error("field has zero norm")]
    ZeroField,
    #[error("operation requires dimension {expected}, cell has d = {found}")]
    WrongDimension { expected: &'static str, found: usize },
    #[error("vector is not tangent: |<tau, psi0>| = {0:e}")]
    NotTangent(f64),
    #[error("line search stalled at step {step:e} (iteration {iter})")]
    LineSearchStalled { iter: usize, step: f64 },
    #[error("iteration did not converge: {0}")]
    NotConverged(String),
    #[error("condition check failed: {0}")]
    CheckFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
