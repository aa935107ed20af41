//! Candidate shapes returned by the pair solvers, with polishing and ranking.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::cubics::CubicPair;
use crate::geometry::LocalShape;

/// Candidates closer than this in (x, y) are merged.
pub const DEDUP_TOL: f64 = 1e-6;
/// Largest relative residual of either cubic accepted as a root.
pub const ROOT_TOL: f64 = 1e-7;
/// Candidates beyond this magnitude are discarded as numerically meaningless.
pub const MAX_MAGNITUDE: f64 = 1e6;
pub const POLISH_STEPS: usize = 8;
/// Step halvings tried when a full Newton step does not lower |A| + |B|.
pub const POLISH_HALVINGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub shape: LocalShape,
    /// |A| + |B| at the candidate.
    pub residual: f64,
    /// max of the per-cubic relative residuals.
    pub relative: f64,
    /// False for the closest-to-real fallback of the resultant solver.
    pub exact: bool,
}

impl Candidate {
    pub fn new(pair: &CubicPair, shape: LocalShape) -> Self {
        let r = pair.eval(shape);
        let (ra, rb) = pair.relative_residual(shape);
        Self { shape, residual: r.l1(), relative: ra.max(rb), exact: true }
    }
}

/// Solver output: real candidates sorted by ascending |A| + |B|.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub candidates: Vec<Candidate>,
}

impl SolutionSet {
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn shapes(&self) -> impl Iterator<Item = LocalShape> + '_ {
        self.candidates.iter().map(|c| c.shape)
    }

    /// Deduplicates, sorts by residual and keeps at most nine entries.
    pub fn finalize(mut candidates: Vec<Candidate>) -> Self {
        candidates.sort_by(|a, b| a.residual.total_cmp(&b.residual));
        let mut kept: Vec<Candidate> = Vec::with_capacity(candidates.len());
        for c in candidates {
            let dup = kept.iter().any(|k| {
                (k.shape.x - c.shape.x).abs() <= DEDUP_TOL * (1.0 + c.shape.x.abs())
                    && (k.shape.y - c.shape.y).abs() <= DEDUP_TOL * (1.0 + c.shape.y.abs())
            });
            if !dup {
                kept.push(c);
            }
        }
        kept.truncate(9);
        Self { candidates: kept }
    }
}

/// Newton steps on (A, B), halved until they lower |A| + |B|.
pub fn polish(pair: &CubicPair, mut s: LocalShape, steps: usize) -> LocalShape {
    let mut f = pair.eval(s).l1();
    for _ in 0..steps {
        if f == 0.0 {
            break;
        }
        let r = pair.eval(s);
        let Some(inv) = pair.jacobian(s).try_inverse() else { break };
        let mut delta = inv * Vector2::new(r.ra, r.rb);
        let mut next = None;
        for _ in 0..=POLISH_HALVINGS {
            let cand = LocalShape::from_vector(s.to_vector() - delta);
            if cand.is_finite() {
                let fc = pair.eval(cand).l1();
                if fc < f {
                    next = Some((cand, fc));
                    break;
                }
            }
            delta *= 0.5;
        }
        let Some((cand, fc)) = next else { break };
        s = cand;
        f = fc;
    }
    s
}

/// Polishes a raw candidate and keeps it if it is a numerically valid common root.
pub fn accept_root(pair: &CubicPair, raw: LocalShape) -> Option<Candidate> {
    if !raw.is_finite() || raw.x.abs() > MAX_MAGNITUDE || raw.y.abs() > MAX_MAGNITUDE {
        return None;
    }
    let c = Candidate::new(pair, polish(pair, raw, POLISH_STEPS));
    (c.relative <= ROOT_TOL).then_some(c)
}
