//! Smooth 2D warps between images: fitting, derivatives, robust flagging, caching.

mod bspline;
mod differentials;
mod fit;
mod robust;
mod sidecar;

pub use bspline::{Warp, WarpDomain, WarpJet};
pub use differentials::{eval_warp, warp_differentials, PairDifferentials, DET_TOL};
pub use fit::{
    fit_warp, fit_warp_regularized, fit_warp_with, grid_spans, BendingEnergy, FitOptions, LinearizedSchwarzian, Regularizer, Smoother,
    SCHWARZIAN_BENDING, SCHWARZIAN_PASSES, DEFAULT_LAMBDA, DOMAIN_PAD, MAD_LAMBDA, MIN_CORRESPONDENCES};
pub use robust::{gate, robust_fit_mad, robust_sigma, InlierRecord, MadStatus, PixelScale, GATE, MAX_ITERATIONS};
pub use sidecar::{read_warp, write_warp, SIDECAR_MAGIC, SIDECAR_VERSION};
