//! Iterative MAD-based inlier flagging around the warp fit.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bspline::Warp;
use super::fit::{fit_warp_with, FitOptions, MIN_CORRESPONDENCES};
use crate::error::Result;
use crate::stats::{median, MAD_TO_SIGMA};

pub const MAX_ITERATIONS: usize = 50;
/// Inlier gate in units of the robust sigma.
pub const GATE: f64 = 3.0;
/// Random triples tried by the least-median affine initialization.
pub const LMEDS_TRIALS: usize = 300;
/// Quadratic re-gating rounds that grow the affine start set.
pub const GROWTH_ROUNDS: usize = 5;

/// Pixel-per-normalized-unit factors used to measure discrepancies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelScale {
    pub fx: f64,
    pub fy: f64,
}

impl PixelScale {
    pub fn l1(&self, d: Vector2<f64>) -> f64 {
        (d.x * self.fx).abs() + (d.y * self.fy).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MadStatus {
    Converged,
    /// The inlier set stopped changing before the σ̂ criterion was met.
    Stationary,
    /// The inlier set fell below the fitting minimum; the previous warp was kept.
    TooFewInliers,
    /// Iteration cap reached; the iterate with the smallest σ̂ was returned.
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierRecord {
    /// Indices flagged as inliers, ascending.
    pub inliers: Vec<usize>,
    /// Robust sigma over the inlier set, pixels.
    pub sigma_hat: f64,
    /// d_j in pixels under the returned warp, for every correspondence.
    pub discrepancies: Vec<f64>,
    pub iterations: usize,
    pub status: MadStatus,
}

impl InlierRecord {
    pub fn is_inlier(&self, j: usize) -> bool {
        self.inliers.binary_search(&j).is_ok()
    }
}

/// σ̂ = 1.4826 · median of the discrepancies.
pub fn robust_sigma(d: &[f64]) -> f64 {
    median(d).map_or(0.0, |m| MAD_TO_SIGMA * m)
}

fn lower_median(d: &[f64]) -> f64 {
    let mut v = d.to_vec();
    let k = (v.len() - 1) / 2;
    *v.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
}

/// Discrepancies under the affine map through three correspondences with the smallest lower
/// median. Triples are drawn by rank in lexicographic point order, so the result does not
/// depend on the input order.
fn lmeds_affine(src: &[Vector2<f64>], dst: &[Vector2<f64>], px: PixelScale) -> Option<Vec<f64>> {
    let s = src.len();
    if s < MIN_CORRESPONDENCES {
        return None;
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| src[a].x.total_cmp(&src[b].x).then(src[a].y.total_cmp(&src[b].y)).then(a.cmp(&b)));
    let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..LMEDS_TRIALS {
        let idx = rand::seq::index::sample(&mut rng, s, 3);
        let t: Vec<usize> = idx.iter().map(|i| order[i]).collect();
        let m = Matrix3::from_rows(&[
            Vector3::new(src[t[0]].x, src[t[0]].y, 1.0).transpose(),
            Vector3::new(src[t[1]].x, src[t[1]].y, 1.0).transpose(),
            Vector3::new(src[t[2]].x, src[t[2]].y, 1.0).transpose(),
        ]);
        let Some(inv) = m.try_inverse() else { continue };
        let cx = inv * Vector3::new(dst[t[0]].x, dst[t[1]].x, dst[t[2]].x);
        let cy = inv * Vector3::new(dst[t[0]].y, dst[t[1]].y, dst[t[2]].y);
        let d: Vec<f64> = src
            .iter()
            .zip(dst)
            .map(|(p, q)| {
                let h = Vector3::new(p.x, p.y, 1.0);
                px.l1(Vector2::new(cx.dot(&h), cy.dot(&h)) - q)
            })
            .collect();
        let med = lower_median(&d);
        if med.is_finite() && best.as_ref().is_none_or(|b| med < b.0) {
            best = Some((med, d));
        }
    }
    best.map(|b| b.1)
}

fn quadratic_basis(p: Vector2<f64>) -> SVector<f64, 6> {
    SVector::<f64, 6>::from([1.0, p.x, p.y, p.x * p.x, p.x * p.y, p.y * p.y])
}

/// Grows an initial inlier set with least-squares quadratic maps re-gated over all points.
/// The affine start misses the edges of strongly foreshortened or bent views, and the spline
/// fit never recovers points it starts without.
fn grow_quadratic(src: &[Vector2<f64>], dst: &[Vector2<f64>], px: PixelScale, mut set: Vec<usize>) -> Vec<usize> {
    let basis: Vec<SVector<f64, 6>> = src.iter().map(|&p| quadratic_basis(p)).collect();
    for _ in 0..GROWTH_ROUNDS {
        let mut ata = SMatrix::<f64, 6, 6>::zeros();
        let (mut bu, mut bv) = (SVector::<f64, 6>::zeros(), SVector::<f64, 6>::zeros());
        for &j in &set {
            ata += basis[j] * basis[j].transpose();
            bu += basis[j] * dst[j].x;
            bv += basis[j] * dst[j].y;
        }
        let Some(chol) = ata.cholesky() else { break };
        let (cu, cv) = (chol.solve(&bu), chol.solve(&bv));
        let d: Vec<f64> = basis.iter().zip(dst).map(|(b, q)| px.l1(Vector2::new(cu.dot(b), cv.dot(b)) - q)).collect();
        let d_set: Vec<f64> = set.iter().map(|&j| d[j]).collect();
        let next = gate(&d, robust_sigma(&d_set));
        if next.len() < MIN_CORRESPONDENCES || next == set {
            break;
        }
        set = next;
    }
    set
}

/// Indices with d_j < 3σ̂.
pub fn gate(d: &[f64], sigma: f64) -> Vec<usize> {
    (0..d.len()).filter(|&j| d[j] < GATE * sigma).collect()
}

fn discrepancies(w: &Warp, src: &[Vector2<f64>], dst: &[Vector2<f64>], px: PixelScale) -> Vec<f64> {
    src.iter().zip(dst).map(|(s, t)| px.l1(w.eval(*s) - t)).collect()
}

/// Robust warp fit: alternate fitting on L and re-gating L at 3σ̂ until σ̂ settles within `delta` pixels.
pub fn robust_fit_mad(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
    opts: &FitOptions,
    delta: f64,
    px: PixelScale,
) -> Result<(Warp, InlierRecord)> {
    let s = src.len();
    let mut inliers: Vec<usize> = match lmeds_affine(src, dst, px) {
        Some(d) => {
            let start = gate(&d, MAD_TO_SIGMA * lower_median(&d));
            if start.len() >= MIN_CORRESPONDENCES { grow_quadratic(src, dst, px, start) } else { (0..s).collect() }
        }
        None => (0..s).collect(),
    };
    let mut weights = vec![0.0; s];
    for &j in &inliers {
        weights[j] = 1.0;
    }
    let mut warp = fit_warp_with(src, dst, &weights, opts)?;
    let mut best: Option<(f64, Warp, Vec<usize>)> = None;
    let mut status = MadStatus::IterationCap;
    let mut iterations = 0;
    let mut sigma_l = robust_sigma(&discrepancies(&warp, src, dst, px));

    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let d = discrepancies(&warp, src, dst, px);
        let sigma = robust_sigma(&d);
        let next = gate(&d, sigma);
        if next.len() < MIN_CORRESPONDENCES {
            log::warn!("MAD gate left {} correspondences; keeping previous warp", next.len());
            status = MadStatus::TooFewInliers;
            break;
        }
        let d_l: Vec<f64> = next.iter().map(|&j| d[j]).collect();
        let sigma_prime = robust_sigma(&d_l);
        let unchanged = next == inliers;
        if !unchanged {
            weights.iter_mut().for_each(|w| *w = 0.0);
            for &j in &next {
                weights[j] = 1.0;
            }
            warp = fit_warp_with(src, dst, &weights, opts)?;
            inliers = next;
        }
        sigma_l = sigma_prime;
        if best.as_ref().is_none_or(|b| sigma < b.0) {
            best = Some((sigma, warp.clone(), inliers.clone()));
        }
        if (sigma - sigma_prime).abs() < delta {
            status = MadStatus::Converged;
            break;
        }
        if unchanged {
            status = MadStatus::Stationary;
            break;
        }
    }
    if status == MadStatus::IterationCap {
        if let Some((_, w, l)) = best {
            warp = w;
            inliers = l;
        }
    }
    let discrepancies = discrepancies(&warp, src, dst, px);
    if status != MadStatus::TooFewInliers {
        let d_l: Vec<f64> = inliers.iter().map(|&j| discrepancies[j]).collect();
        sigma_l = robust_sigma(&d_l);
    }
    Ok((warp, InlierRecord { inliers, sigma_hat: sigma_l, discrepancies, iterations, status }))
}
