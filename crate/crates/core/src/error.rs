use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("normalized point ({u}, {v}) outside the physical sanity bound")]
    PointOutOfRange { u: f64, v: f64 },
    #[error("inverse depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate surface normal")]
    DegenerateNormal,
    #[error("too few correspondences: {got} < {need}")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("warp fit is ill-posed after regularisation retries")]
    IllPosedWarp,
    #[error("degenerate warp jacobian (|det J| = {0:e})")]
    DegenerateJacobian(f64),
    #[error("degenerate cubic pair")]
    DegeneratePair,
    #[error("no real solution")]
    NoRealSolution,
    #[error("correspondence cannot be reconstructed: {0}")]
    Unreconstructable(String),
    #[error("surface integration failed: {0}")]
    Integration(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("{path}: {cause}")]
    Io { path: String, cause: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
