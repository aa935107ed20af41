//! Pair solver through the Sylvester resultant that eliminates y, using precomputed expansions.

use serde::{Deserialize, Serialize};

use crate::cubics::CubicPair;
use crate::error::{Error, Result};
use crate::geometry::LocalShape;
use crate::poly;
use crate::solution::{accept_root, polish, Candidate, SolutionSet, MAX_MAGNITUDE, POLISH_STEPS};
use crate::stats::median;

/// Pruning threshold as a fraction of the median absolute coefficient.
pub const PRUNE_FRACTION: f64 = 0.01;
/// Leading resultant coefficients below this fraction of the largest are dropped.
pub const LEADING_TOL: f64 = 1e-12;

struct Term {
    power: u8,
    coeff: f64,
    len: u8,
    factors: [u8; 6],
}

struct CaseTable {
    deg_a: u8,
    deg_b: u8,
    degree: u8,
    factors: &'static str,
    terms: &'static [Term],
}

include!(concat!(env!("OUT_DIR"), "/resultant_tables.rs"));

fn case_table(deg_a: u8, deg_b: u8) -> &'static CaseTable {
    CASES.iter().find(|c| c.deg_a == deg_a && c.deg_b == deg_b).expect("all nine y-degree cases are tabulated")
}

/// Nominal resultant degree and factor tag for a (deg_A, deg_B) case.
pub fn case_info(deg_a: u8, deg_b: u8) -> (u8, &'static str) {
    let c = case_table(deg_a, deg_b);
    (c.degree, c.factors)
}

/// Coefficients after median-relative pruning and the y-degree case they select.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunedPair {
    pub deg_a: u8,
    pub deg_b: u8,
    pub a: [f64; 10],
    pub b: [f64; 10],
    pub th_a: f64,
    pub th_b: f64,
}

fn prune(c: &[f64; 10]) -> ([f64; 10], f64) {
    let abs: Vec<f64> = c.iter().map(|v| v.abs()).collect();
    let th = PRUNE_FRACTION * median(&abs).unwrap_or(0.0);
    let mut out = *c;
    for v in out.iter_mut() {
        if v.abs() < th {
            *v = 0.0;
        }
    }
    (out, th)
}

/// Degree in y from the surviving coefficient groups: a03 | a12, a02 | a21, a11, a01.
fn y_degree(c: &[f64; 10]) -> u8 {
    if c[3] != 0.0 {
        3
    } else if c[2] != 0.0 || c[6] != 0.0 {
        2
    } else if c[1] != 0.0 || c[5] != 0.0 || c[8] != 0.0 {
        1
    } else {
        0
    }
}

pub fn prune_and_classify(pair: &CubicPair) -> Result<PrunedPair> {
    if pair.a.iter().chain(&pair.b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cubic coefficients"));
    }
    let (a, th_a) = prune(&pair.a);
    let (b, th_b) = prune(&pair.b);
    let (deg_a, deg_b) = (y_degree(&a), y_degree(&b));
    if deg_a == 0 || deg_b == 0 || pair.is_degenerate() {
        return Err(Error::DegeneratePair);
    }
    Ok(PrunedPair { deg_a, deg_b, a, b, th_a, th_b })
}

/// Resultant in x with its tabulated nominal degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultantPoly {
    /// Ascending coefficients, leading negligible terms removed.
    pub coeffs: Vec<f64>,
    pub nominal_degree: u8,
    pub factors: String,
    /// True when the leading coefficient had to be dropped.
    pub degree_reduced: bool,
}

impl ResultantPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}

/// Raw table evaluation for a case; coefficients of x^0..x^degree.
fn expand(case: &CaseTable, a: &[f64; 10], b: &[f64; 10]) -> Vec<f64> {
    let mut coef = [0.0; 20];
    coef[..10].copy_from_slice(a);
    coef[10..].copy_from_slice(b);
    let mut out = vec![0.0; case.degree as usize + 1];
    for t in case.terms {
        let mut v = t.coeff;
        for &f in &t.factors[..t.len as usize] {
            v *= coef[f as usize];
        }
        out[t.power as usize] += v;
    }
    out
}

pub fn sylvester_resultant(p: &PrunedPair) -> ResultantPoly {
    let case = case_table(p.deg_a, p.deg_b);
    let full = expand(case, &p.a, &p.b);
    let trimmed = poly::trim_leading(&full, LEADING_TOL);
    let degree_reduced = trimmed.len() < full.len();
    if degree_reduced {
        log::debug!("resultant degree reduced from {} to {}", case.degree, trimmed.len().saturating_sub(1));
    }
    ResultantPoly {
        coeffs: trimmed.to_vec(),
        nominal_degree: case.degree,
        factors: case.factors.to_string(),
        degree_reduced,
    }
}

/// y-coefficients of a cubic at fixed x, ascending in y.
fn y_poly(c: &[f64; 10], x: f64) -> [f64; 4] {
    [((c[0] * x + c[4]) * x + c[7]) * x + c[9], (c[1] * x + c[5]) * x + c[8], c[2] * x + c[6], c[3]]
}

fn back_substitute(pair: &CubicPair, x: f64, out: &mut Vec<LocalShape>) {
    for c in [&pair.a, &pair.b] {
        let yp = y_poly(c, x);
        let yp = poly::trim_leading(&yp, 1e-12);
        for y in poly::real_roots(yp) {
            if y.abs() <= MAX_MAGNITUDE {
                out.push(LocalShape::new(x, y));
            }
        }
    }
}

/// Real roots of the resultant, y by back-substitution, polished and ranked. Never empty for
/// a non-degenerate pair: without any exact root the closest-to-real candidate is returned
/// with `exact = false`.
pub fn solve_pair_resultant(pair: &CubicPair) -> Result<SolutionSet> {
    let pruned = prune_and_classify(pair)?;
    let res = sylvester_resultant(&pruned);
    let roots = poly::roots(&res.coeffs);
    let mut raw = Vec::new();
    for z in roots.iter().filter(|z| poly::is_real(**z)) {
        back_substitute(pair, poly::polish_real(&res.coeffs, z.re, 3), &mut raw);
    }
    let cands: Vec<Candidate> = raw.iter().filter_map(|s| accept_root(pair, *s)).collect();
    if !cands.is_empty() {
        return Ok(SolutionSet::finalize(cands));
    }
    Ok(SolutionSet { candidates: vec![fallback(pair, &roots)] })
}

fn fallback(pair: &CubicPair, roots: &[poly::C64]) -> Candidate {
    let mut raw = Vec::new();
    let mut order: Vec<_> = roots.iter().filter(|z| z.re.abs() <= MAX_MAGNITUDE).collect();
    order.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()));
    if let Some(z) = order.first() {
        back_substitute(pair, z.re, &mut raw);
    }
    raw.push(LocalShape::default());
    let mut best = raw
        .into_iter()
        .map(|s| Candidate::new(pair, polish(pair, s, POLISH_STEPS)))
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("origin candidate always present");
    best.exact = false;
    best
}
