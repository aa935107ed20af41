//! Robust isometric non-rigid structure-from-motion.

pub mod cubics;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod isometry;
pub mod multi_reference;
pub mod normal_solver;
pub mod pipeline;
pub mod poly;
pub mod resultant;
pub mod solution;
pub mod stats;
pub mod substitution;
pub mod synth;
pub mod warp;

pub use cubics::{assemble_cubics, eval_cubics, transfer_shape, CubicPair, ShapeResidual};
pub use data::CorrespondenceSet;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, GroundTruth};
pub use geometry::{CameraIntrinsics, LocalShape, NormalizedPoint, SurfacePoint};
pub use normal_solver::BaseSolver;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, PointEstimate, Timings};
pub use synth::{generate_cylinder, CylinderParams, ErrorModel, SyntheticScene};
pub use warp::{PairDifferentials, Warp};
