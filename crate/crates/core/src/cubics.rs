//! The two bivariate cubics A(x, y), B(x, y) linking a reference point to one other image.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{LocalShape, NormalizedPoint};
use crate::warp::PairDifferentials;

/// Monomial exponents (k, l) of x^k y^l in coefficient order a30, a21, ..., a00.
pub const MONOMIALS: [(u8, u8); 10] = [(3, 0), (2, 1), (1, 2), (0, 3), (2, 0), (1, 1), (0, 2), (1, 0), (0, 1), (0, 0)];
pub const NAMES: [&str; 10] = ["30", "21", "12", "03", "20", "11", "02", "10", "01", "00"];

/// Coefficients below this magnitude everywhere make a cubic unusable.
pub const DEGENERATE_TOL: f64 = 1e-13;

/// Shared intermediates e1..e16 (index 0 unused) and the shift t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intermediates {
    pub e: [f64; 17],
    pub t1: f64,
    pub t2: f64,
}

impl Intermediates {
    pub fn new(p1: NormalizedPoint, d: &PairDifferentials) -> Result<Self> {
        let det = d.det();
        if !(det.abs() > crate::warp::DET_TOL) {
            return Err(Error::DegenerateJacobian(det.abs()));
        }
        let (u1, v1, u2, v2) = (p1.u, p1.v, d.at.u, d.at.v);
        let (j1, j2, j3, j4) = (d.j1(), d.j2(), d.j3(), d.j4());
        let t = transfer_offset(&d.j, d.h());
        let (t1, t2) = (t.x, t.y);
        let mut e = [0.0; 17];
        e[1] = 1.0 + u1 * u1 + v1 * v1;
        e[2] = 1.0 + u2 * u2 + v2 * v2;
        e[3] = j1 * u1 + j2 * v1;
        e[4] = j3 * u1 + j4 * v1;
        e[5] = 1.0 - 2.0 * t2 * v2 + e[2] * t2 * t2;
        e[6] = 1.0 - 2.0 * t1 * u2 + e[2] * t1 * t1;
        e[7] = j1 * j3 + j2 * j4;
        e[8] = t2 * u2 + t1 * v2 - e[2] * t1 * t2;
        e[9] = v2 - e[2] * t2;
        e[10] = u2 - e[2] * t1;
        e[11] = j2 * u1 + j4 * v1;
        e[12] = j2 * u1 - j3 * u1;
        e[13] = j1 * j1 + j2 * j2;
        e[14] = j3 * j3 + j4 * j4;
        e[15] = j1 * j4 + j2 * j3;
        e[16] = j1 * j4 - j2 * j3;
        Ok(Self { e, t1, t2 })
    }
}

/// t = −S·J⁻¹·(h3, h4) with S the coordinate swap; the affine part of the shape transfer.
pub fn transfer_offset(j: &Matrix2<f64>, h: Vector2<f64>) -> Vector2<f64> {
    let det = j.determinant();
    let a = (j[(1, 1)] * h.x - j[(0, 1)] * h.y) / det;
    let b = (-j[(1, 0)] * h.x + j[(0, 0)] * h.y) / det;
    Vector2::new(-b, -a)
}

/// The cubic pair for one reference point and one other image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicPair {
    pub a: [f64; 10],
    pub b: [f64; 10],
    pub p1: NormalizedPoint,
    pub diff: PairDifferentials,
    pub terms: Intermediates,
}

/// Values of both cubics at one shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeResidual {
    pub ra: f64,
    pub rb: f64,
}

impl ShapeResidual {
    pub fn l1(&self) -> f64 {
        self.ra.abs() + self.rb.abs()
    }
}

/// Builds both cubics for the reference point `p1` and the differentials of the warp
/// that maps the other image onto the reference image, taken at the other image's point.
pub fn assemble_cubics(p1: NormalizedPoint, d: &PairDifferentials) -> Result<CubicPair> {
    ensure_finite(&[p1.u, p1.v, d.at.u, d.at.v, d.h3(), d.h4()], "cubic inputs")?;
    ensure_finite(d.j.as_slice(), "warp jacobian")?;
    let it = Intermediates::new(p1, d)?;
    let e = &it.e;
    let (u1, v1) = (p1.u, p1.v);
    let (j1, j2, j3, j4) = (d.j1(), d.j2(), d.j3(), d.j4());
    let (e1, e2, e3, e4, e5, e6, e7, e8) = (e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let (e9, e10, e13, e14, e15, e16) = (e[9], e[10], e[13], e[14], e[15], e[16]);

    let a = [
        2.0 * e1 * j1 * j3 * j3 * e10 - 2.0 * e1 * j1 * j1 * j3 * e9 + 2.0 * e2 * j1 * j3 * v1 * e16,
        2.0 * e1 * j3 * (j1 * j4 + e15) * e10 - 2.0 * e1 * j1 * (e15 + j2 * j3) * e9
            + 2.0 * e16 * e2 * (v1 * e15 - j1 * j3 * u1),
        2.0 * e1 * j4 * (e15 + j2 * j3) * e10 - 2.0 * e1 * j2 * (j1 * j4 + e15) * e9
            + 2.0 * e2 * e16 * (j2 * j4 * v1 - u1 * e15),
        2.0 * e1 * j2 * j4 * j4 * e10 - 2.0 * e1 * j2 * j2 * j4 * e9 - 2.0 * e2 * j2 * j4 * u1 * e16,
        4.0 * j1 * j3 * e3 * e9 - 4.0 * j1 * j3 * e4 * e10 + j1 * j1 * e1 * e5 - j3 * j3 * e1 * e6 - e2 * e15 * e16,
        4.0 * (e3 * e15 * e9 - e4 * e15 * e10)
            + 2.0 * e1 * (j1 * j2 * e5 - j3 * j4 * e6)
            + 2.0 * e2 * (j1 * j3 - j2 * j4) * e16,
        4.0 * j2 * j4 * e3 * e9 - 4.0 * j2 * j4 * e4 * e10 + e1 * j2 * j2 * e5 - e1 * j4 * j4 * e6 + e2 * e15 * e16,
        2.0 * j1 * e14 * e10 - 2.0 * j3 * e13 * e9 - 2.0 * j1 * e3 * e5 + 2.0 * j3 * e4 * e6,
        2.0 * j2 * e14 * e10 - 2.0 * j4 * e13 * e9 - 2.0 * j2 * e3 * e5 + 2.0 * j4 * e4 * e6,
        e13 * e5 - e14 * e6,
    ];
    let b = [
        e1 * j3 * j3 * j3 * e10 - j1 * j3 * j3 * e1 * e9 + j3 * j3 * e2 * v1 * e16,
        3.0 * j3 * j3 * j4 * e1 * e10 - j3 * e1 * (j1 * j4 + e15) * e9 + j3 * e2 * (2.0 * j4 * v1 - j3 * u1) * e16,
        3.0 * j3 * j4 * j4 * e1 * e10 - j4 * e1 * (e15 + j2 * j3) * e9 + j4 * e2 * (j4 * v1 - 2.0 * j3 * u1) * e16,
        e1 * j4 * j4 * j4 * e10 - j2 * j4 * j4 * e1 * e9 - j4 * j4 * e2 * u1 * e16,
        j1 * j3 * e1 * e5 + 2.0 * j3 * j3 * e3 * e9 - 2.0 * j3 * j3 * e4 * e10 + j3 * j3 * e1 * e8 - j3 * j4 * e2 * e16,
        e15 * e1 * e5 + 2.0 * j3 * j4 * (2.0 * e3 * e9 - 2.0 * e4 * e10 + e1 * e8) + e16 * e2 * (j3 * j3 - j4 * j4),
        j2 * j4 * e1 * e5 + 2.0 * j4 * j4 * e3 * e9 - 2.0 * j4 * j4 * e4 * e10 + j4 * j4 * e1 * e8 + j3 * j4 * e2 * e16,
        j3 * e14 * e10 - (j3 * e7 - j4 * e16) * e9 - (j1 * e4 + j3 * e3) * e5 - 2.0 * j3 * e4 * e8,
        j4 * e14 * e10 - (j3 * e16 + j4 * e7) * e9 - (j4 * e3 + j2 * e4) * e5 - 2.0 * j4 * e4 * e8,
        e14 * e8 + e7 * e5,
    ];
    ensure_finite(&a, "cubic A")?;
    ensure_finite(&b, "cubic B")?;
    Ok(CubicPair { a, b, p1, diff: *d, terms: it })
}

/// Evaluates a cubic given in `MONOMIALS` order.
pub fn eval_cubic(c: &[f64; 10], x: f64, y: f64) -> f64 {
    // Horner in y with x-polynomial coefficients
    let y0 = ((c[0] * x + c[4]) * x + c[7]) * x + c[9];
    let y1 = (c[1] * x + c[5]) * x + c[8];
    let y2 = c[2] * x + c[6];
    ((c[3] * y + y2) * y + y1) * y + y0
}

/// Σ |c_kl| |x|^k |y|^l, the scale of a cubic's value at (x, y).
pub fn abs_eval_cubic(c: &[f64; 10], x: f64, y: f64) -> f64 {
    let mut a = [0.0; 10];
    for (o, k) in a.iter_mut().zip(c) {
        *o = k.abs();
    }
    eval_cubic(&a, x.abs(), y.abs())
}

/// Gradient (∂/∂x, ∂/∂y) of a cubic.
pub fn grad_cubic(c: &[f64; 10], x: f64, y: f64) -> (f64, f64) {
    let dx = 3.0 * c[0] * x * x + 2.0 * c[1] * x * y + c[2] * y * y + 2.0 * c[4] * x + c[5] * y + c[7];
    let dy = c[1] * x * x + 2.0 * c[2] * x * y + 3.0 * c[3] * y * y + c[5] * x + 2.0 * c[6] * y + c[8];
    (dx, dy)
}

pub fn eval_cubics(c: &CubicPair, s: LocalShape) -> ShapeResidual {
    ShapeResidual { ra: eval_cubic(&c.a, s.x, s.y), rb: eval_cubic(&c.b, s.x, s.y) }
}

impl CubicPair {
    /// Pair from raw coefficients, for solver inputs that do not come from warps.
    pub fn from_coefficients(a: [f64; 10], b: [f64; 10]) -> Self {
        let p = NormalizedPoint { u: 0.0, v: 0.0 };
        let diff = PairDifferentials::identity(p);
        let terms = Intermediates::new(p, &diff).expect("identity differentials are regular");
        Self { a, b, p1: p, diff, terms }
    }

    pub fn eval(&self, s: LocalShape) -> ShapeResidual {
        eval_cubics(self, s)
    }

    /// Residual of each cubic relative to the magnitude of its terms at `s`.
    pub fn relative_residual(&self, s: LocalShape) -> (f64, f64) {
        let r = self.eval(s);
        let sa = abs_eval_cubic(&self.a, s.x, s.y).max(f64::MIN_POSITIVE);
        let sb = abs_eval_cubic(&self.b, s.x, s.y).max(f64::MIN_POSITIVE);
        (r.ra.abs() / sa, r.rb.abs() / sb)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.a.iter().chain(&self.b).fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// True when either cubic vanishes identically.
    pub fn is_degenerate(&self) -> bool {
        let ma = self.a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mb = self.b.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        !(ma > DEGENERATE_TOL && mb > DEGENERATE_TOL)
    }

    /// Jacobian of (A, B) with respect to (x, y).
    pub fn jacobian(&self, s: LocalShape) -> Matrix2<f64> {
        let (ax, ay) = grad_cubic(&self.a, s.x, s.y);
        let (bx, by) = grad_cubic(&self.b, s.x, s.y);
        Matrix2::new(ax, ay, bx, by)
    }
}

/// Shape in the other image implied by the reference shape: Jᵀ(x, y) + t.
pub fn transfer_shape(s: LocalShape, d: &PairDifferentials) -> Result<LocalShape> {
    let det = d.det();
    if !(det.abs() > crate::warp::DET_TOL) {
        return Err(Error::DegenerateJacobian(det.abs()));
    }
    let z = d.j.transpose() * s.to_vector() + transfer_offset(&d.j, d.h());
    Ok(LocalShape::from_vector(z))
}
