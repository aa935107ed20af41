//! Pair solver through the change of variables z = Jᵀ(x, y), which makes B linear in z1.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cubics::CubicPair;
use crate::error::{Error, Result};
use crate::geometry::LocalShape;
use crate::poly;
use crate::solution::{accept_root, Candidate, SolutionSet, MAX_MAGNITUDE};

/// |C(z2)| above this fraction of max|d| counts as non-zero.
pub const C_ZERO_TOL: f64 = 1e-10;

/// Reduced cubics A′(z1, z2), B′(z1, z2) = z1·C(z2) + N(z2) and the s-terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionSystem {
    /// c21, c12, c20, c11, c02, c10, c01, c00.
    pub c: [f64; 8],
    /// d12, d11, d10, d03, d02, d01, d00.
    pub d: [f64; 7],
    /// s1..s16 (index 0 unused).
    pub s: [f64; 17],
    pub j: Matrix2<f64>,
}

pub fn build_substitution(pair: &CubicPair) -> SubstitutionSystem {
    let e = &pair.terms.e;
    let (t1, t2) = (pair.terms.t1, pair.terms.t2);
    let (u2, v2) = (pair.diff.at.u, pair.diff.at.v);
    let (e1, e2, e3, e4, e5, e6, e7, e8) = (e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let (e9, e10, e11, e12, e13, e14) = (e[9], e[10], e[11], e[12], e[13], e[14]);

    let c = [
        2.0 * e1 * (e2 * t2 - v2) + 2.0 * e2 * e4,
        2.0 * e1 * (u2 - e2 * t1) - 2.0 * e2 * e3,
        e1 * e5 - e2 * e14,
        4.0 * (e2 * t1 - u2) * e4 + 4.0 * (v2 - e2 * t2) * e3,
        e2 * e13 - e1 * e6,
        2.0 * (u2 - e2 * t1) * e14 - 2.0 * e5 * e3,
        2.0 * e6 * e4 - 2.0 * (v2 - e2 * t2) * e13,
        e5 * e13 - e6 * e14,
    ];
    let d = [
        e2 * e4 - e1 * (v2 - e2 * t2),
        e1 * e5 - e2 * e14,
        (v2 - e2 * t2) * e14 - e5 * e4,
        e1 * (u2 - e2 * t1) - e2 * e3,
        e2 * e7 + e1 * e8 - 2.0 * (u2 - e2 * t1) * e4 + 2.0 * (v2 - e2 * t2) * e3,
        -e5 * e3 - 2.0 * (v2 - e2 * t2) * e7 + (u2 - e2 * t1) * e14 - 2.0 * e8 * e4,
        e5 * e7 + e8 * e14,
    ];
    let mut s = [0.0; 17];
    s[1] = 2.0 * e2 * e11 - 2.0 * e1 * e9;
    s[5] = e2 * e14 - e1 * e5;
    s[8] = 2.0 * e3 * e5 - 2.0 * e14 * e10;
    s[9] = 4.0 * e10 * e11 - 4.0 * e3 * e9;
    s[10] = 2.0 * e2 * e3 - 2.0 * e1 * e10;
    s[11] = e4 * e5 - 2.0 * e14 * e9;
    s[12] = e14 * e2 - e1 * e5 + 2.0 * e9 * e12;
    s[13] = e2 * e11 - e1 * e9 + e2 * e12;
    s[14] = e13 * e5 - e14 * e6;
    s[15] = 2.0 * e11 * e6 - e9 * e13;
    s[16] = e2 * e13 - e1 * e6;
    s[2] = s[10] * s[11] + s[9] * s[12] - s[13] * s[8];
    s[3] = s[8] * s[12] + s[9] * s[11];
    s[4] = s[9] * s[13] - s[10] * s[12];
    s[6] = s[12] * s[12] - 2.0 * s[11] * s[13];
    s[7] = s[15] * s[15] + 2.0 * s[14] * s[16];
    SubstitutionSystem { c, d, s, j: pair.diff.j }
}

impl SubstitutionSystem {
    /// N(z2) = d00 + d01 z2 + d02 z2² + d03 z2³, ascending.
    pub fn n_poly(&self) -> [f64; 4] {
        [self.d[6], self.d[5], self.d[4], self.d[3]]
    }

    /// C(z2) = d10 + d11 z2 + d12 z2², ascending.
    pub fn c_poly(&self) -> [f64; 3] {
        [self.d[2], self.d[1], self.d[0]]
    }

    pub fn eval_a(&self, z1: f64, z2: f64) -> f64 {
        let c = &self.c;
        c[0] * z1 * z1 * z2 + c[1] * z1 * z2 * z2 + c[2] * z1 * z1 + c[3] * z1 * z2 + c[4] * z2 * z2 + c[5] * z1 + c[6] * z2 + c[7]
    }

    pub fn eval_b(&self, z1: f64, z2: f64) -> f64 {
        z1 * poly::eval(&self.c_poly(), z2) + poly::eval(&self.n_poly(), z2)
    }

    /// Univariate polynomial in z2 left after eliminating z1 = −N/C, ascending.
    pub fn eliminant(&self) -> Vec<f64> {
        let c = &self.c;
        let n = self.n_poly();
        let cp = self.c_poly();
        let mut out = poly::mul(&[c[2], c[0]], &poly::mul(&n, &n));
        poly::add_scaled(&mut out, &poly::mul(&[c[5], c[3], c[1]], &poly::mul(&n, &cp)), -1.0);
        poly::add_scaled(&mut out, &poly::mul(&[c[7], c[6], c[4]], &poly::mul(&cp, &cp)), 1.0);
        out
    }

    /// Discriminant of D = s16 z2² + s15 z2 + s14.
    pub fn d_discriminant(&self) -> f64 {
        self.s[15] * self.s[15] - 4.0 * self.s[16] * self.s[14]
    }

    fn to_shape(&self, z1: f64, z2: f64) -> Option<LocalShape> {
        if !(z1.abs() <= MAX_MAGNITUDE && z2.abs() <= MAX_MAGNITUDE) {
            return None;
        }
        let xy = self.j.transpose().try_inverse()? * Vector2::new(z1, z2);
        Some(LocalShape::from_vector(xy))
    }

    fn d_scale(&self) -> f64 {
        self.d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn raw_candidates(sys: &SubstitutionSystem, zs: &[(f64, f64)], pair: &CubicPair) -> SolutionSet {
    let cands = zs.iter().filter_map(|&(z1, z2)| sys.to_shape(z1, z2)).map(|s| Candidate::new(pair, s)).collect();
    SolutionSet::finalize(cands)
}

fn c_nonzero_roots(sys: &SubstitutionSystem) -> Vec<(f64, f64)> {
    let elim = sys.eliminant();
    let elim = poly::trim_leading(&elim, 1e-12);
    let tol = C_ZERO_TOL * sys.d_scale();
    let mut out = Vec::new();
    for z2 in poly::real_roots(elim) {
        let c = poly::eval(&sys.c_poly(), z2);
        if c.abs() > tol {
            out.push((-poly::eval(&sys.n_poly(), z2) / c, z2));
        }
    }
    out
}

fn c_zero_roots(sys: &SubstitutionSystem) -> Vec<(f64, f64)> {
    let c = &sys.c;
    let n = sys.n_poly();
    let mut out = Vec::new();
    for z2 in poly::real_roots(poly::trim_leading(&n, 1e-12)) {
        let qa = c[0] * z2 + c[2];
        let qb = c[1] * z2 * z2 + c[3] * z2 + c[5];
        let qc = c[4] * z2 * z2 + c[6] * z2 + c[7];
        for z1 in poly::quadratic_real_roots(qa, qb, qc) {
            out.push((z1, z2));
        }
    }
    out
}

/// Roots with C(z2) ≠ 0: real roots of the eliminant, z1 from B′ = 0.
pub fn solve_c_nonzero(sys: &SubstitutionSystem, pair: &CubicPair) -> SolutionSet {
    raw_candidates(sys, &c_nonzero_roots(sys), pair)
}

/// The C = 0 branch: z2 from N(z2) = 0 and z1 from the quadratic A′(·, z2) = 0.
pub fn solve_c_zero(sys: &SubstitutionSystem, pair: &CubicPair) -> SolutionSet {
    raw_candidates(sys, &c_zero_roots(sys), pair)
}

/// Union of both branches, polished, filtered to genuine common roots and ranked.
pub fn solve_pair_substitution(pair: &CubicPair) -> Result<SolutionSet> {
    if pair.is_degenerate() {
        return Err(Error::DegeneratePair);
    }
    let sys = build_substitution(pair);
    let mut zs = c_nonzero_roots(&sys);
    zs.extend(c_zero_roots(&sys));
    let cands: Vec<Candidate> =
        zs.iter().filter_map(|&(z1, z2)| sys.to_shape(z1, z2)).filter_map(|s| accept_root(pair, s)).collect();
    let set = SolutionSet::finalize(cands);
    if set.is_empty() {
        Err(Error::NoRealSolution)
    } else {
        Ok(set)
    }
}
