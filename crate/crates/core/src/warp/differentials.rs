//! First and second warp derivatives in the layout consumed by the reconstruction equations.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::bspline::Warp;
use crate::error::{Error, Result};
use crate::geometry::NormalizedPoint;

/// Determinant magnitude below which a warp Jacobian is unusable.
pub const DET_TOL: f64 = 1e-8;

/// Warp derivatives at one point.
///
/// `j = [[j1, j3], [j2, j4]]` is the Jacobian, `hu = ∂J/∂u` and `hv = ∂J/∂v`.
/// The reconstruction equations use only `(h3, h4)`, the second column of `hu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDifferentials {
    pub j: Matrix2<f64>,
    pub hu: Matrix2<f64>,
    pub hv: Matrix2<f64>,
    /// Point where the derivatives are taken.
    pub at: NormalizedPoint,
    /// Warp image of `at`.
    pub target: NormalizedPoint,
}

impl PairDifferentials {
    pub fn new(j: Matrix2<f64>, h3: f64, h4: f64, at: NormalizedPoint, target: NormalizedPoint) -> Self {
        let mut hu = Matrix2::zeros();
        hu[(0, 1)] = h3;
        hu[(1, 1)] = h4;
        let mut hv = Matrix2::zeros();
        hv[(0, 0)] = h3;
        hv[(1, 0)] = h4;
        Self { j, hu, hv, at, target }
    }

    pub fn identity(p: NormalizedPoint) -> Self {
        Self::new(Matrix2::identity(), 0.0, 0.0, p, p)
    }

    pub fn j1(&self) -> f64 {
        self.j[(0, 0)]
    }
    pub fn j2(&self) -> f64 {
        self.j[(1, 0)]
    }
    pub fn j3(&self) -> f64 {
        self.j[(0, 1)]
    }
    pub fn j4(&self) -> f64 {
        self.j[(1, 1)]
    }
    /// ∂²η₁/∂u∂v.
    pub fn h3(&self) -> f64 {
        self.hu[(0, 1)]
    }
    /// ∂²η₂/∂u∂v.
    pub fn h4(&self) -> f64 {
        self.hu[(1, 1)]
    }

    pub fn det(&self) -> f64 {
        self.j.determinant()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.det().abs() > DET_TOL)
    }

    pub fn h(&self) -> Vector2<f64> {
        Vector2::new(self.h3(), self.h4())
    }
}

/// Analytic derivatives of `w` at `p`; fails on a near-singular Jacobian.
pub fn warp_differentials(w: &Warp, p: NormalizedPoint) -> Result<PairDifferentials> {
    let jet = w.jet(p.to_vector());
    let det = jet.jacobian.determinant();
    if !(det.abs() > DET_TOL) {
        return Err(Error::DegenerateJacobian(det.abs()));
    }
    Ok(PairDifferentials { j: jet.jacobian, hu: jet.hu, hv: jet.hv, at: p, target: NormalizedPoint::from_vector(jet.value)? })
}

/// Evaluates `w` at `p`, reporting whether `p` lies outside the fitted domain.
pub fn eval_warp(w: &Warp, p: NormalizedPoint) -> Result<(NormalizedPoint, bool)> {
    let q = w.eval(p.to_vector());
    Ok((NormalizedPoint::from_vector(q)?, !w.contains(p.to_vector())))
}
