//! Per-correspondence shape estimation with one reference image over an image subset.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cubics::{assemble_cubics, transfer_shape, CubicPair};
use crate::error::{Error, Result};
use crate::geometry::{normal_from_shape, LocalShape, NormalizedPoint};
use crate::resultant::solve_pair_resultant;
use crate::solution::SolutionSet;
use crate::stats::median;
use crate::substitution::solve_pair_substitution;
use crate::warp::PairDifferentials;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseSolver {
    Substitution,
    #[default]
    Resultant,
}

impl BaseSolver {
    pub fn solve(self, pair: &CubicPair) -> Result<SolutionSet> {
        match self {
            BaseSolver::Substitution => solve_pair_substitution(pair),
            BaseSolver::Resultant => solve_pair_resultant(pair),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub solver: BaseSolver,
    /// Image flagged when its residual exceeds this multiple of the median.
    pub flag_factor: f64,
    /// Residuals below `flag_floor` × the pair's largest coefficient are never flagged.
    pub flag_floor: f64,
    /// Fraction of the visible images used for initialization, with at least `init_min` of them.
    pub init_fraction: f64,
    pub init_min: usize,
    pub lm_max_iterations: usize,
    pub lm_step_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            solver: BaseSolver::Resultant,
            flag_factor: 10.0,
            flag_floor: 1e-8,
            init_fraction: 0.1,
            init_min: 10,
            lm_max_iterations: 100,
            lm_step_tol: 1e-10,
        }
    }
}

/// One non-reference image of a correspondence.
#[derive(Debug, Clone)]
pub struct OtherView {
    pub image: usize,
    pub point: NormalizedPoint,
    pub diff: PairDifferentials,
    pub pair: CubicPair,
    candidates: Option<Option<SolutionSet>>,
}

/// A correspondence seen from a fixed reference image.
#[derive(Debug, Clone)]
pub struct CorrespondenceView {
    pub reference: usize,
    pub point: NormalizedPoint,
    pub others: Vec<OtherView>,
}

impl CorrespondenceView {
    /// Builds the view from reference point and, per other image, the differentials of the
    /// warp onto the reference taken at that image's point. Degenerate pairs are dropped.
    pub fn new(reference: usize, point: NormalizedPoint, others: &[(usize, PairDifferentials)]) -> Self {
        let others = others
            .iter()
            .filter_map(|&(image, diff)| {
                let pair = assemble_cubics(point, &diff).ok()?;
                (!pair.is_degenerate()).then_some(OtherView { image, point: diff.at, diff, pair, candidates: None })
            })
            .collect();
        Self { reference, point, others }
    }

    /// Images with equations, including the reference.
    pub fn visible_count(&self) -> usize {
        self.others.len() + 1
    }

    /// Solves every pair once; later calls reuse the result.
    pub fn solve_pairs(&mut self, solver: BaseSolver) {
        for o in &mut self.others {
            if o.candidates.is_none() {
                o.candidates = Some(solver.solve(&o.pair).ok());
            }
        }
    }

    fn candidates(&self, k: usize, solver: BaseSolver) -> Option<SolutionSet> {
        match &self.others[k].candidates {
            Some(c) => c.clone(),
            None => solver.solve(&self.others[k].pair).ok(),
        }
    }

    /// Σ |A| + |B| over the active others.
    pub fn total_residual(&self, s: LocalShape, active: &[bool]) -> f64 {
        self.others.iter().zip(active).filter(|(_, &a)| a).map(|(o, _)| o.pair.eval(s).l1()).sum()
    }

    fn sum_squares(&self, s: LocalShape, use_: &[bool]) -> f64 {
        self.others
            .iter()
            .zip(use_)
            .filter(|(_, &a)| a)
            .map(|(o, _)| {
                let r = o.pair.eval(s);
                r.ra * r.ra + r.rb * r.rb
            })
            .sum()
    }
}

/// Result of the base solver for one correspondence and reference.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub reference_shape: LocalShape,
    pub reference_normal: Vector3<f64>,
    /// Per entry of `others`: transferred shape and normal, `None` when inactive or degenerate.
    pub shapes: Vec<Option<LocalShape>>,
    pub normals: Vec<Option<Vector3<f64>>>,
    /// Indices into `others` flagged at initialization.
    pub flagged: Vec<usize>,
    pub residual: f64,
    pub lm_failed: bool,
}

/// Key for the reproducible per-correspondence generator.
pub fn rng_for(subset: u64, track: u64, reference: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(subset.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ track);
    rng.set_stream(reference);
    rng
}

/// Picks the candidate of the sampled pairs with minimal summed residual over the active
/// images and flags images whose residual exceeds `flag_factor` × the median.
pub fn initialize_shape(
    cv: &CorrespondenceView,
    active: &[bool],
    settings: &SolverSettings,
    rng: &mut ChaCha8Rng,
) -> Result<(LocalShape, Vec<usize>)> {
    let act: Vec<usize> = (0..cv.others.len()).filter(|&k| active[k]).collect();
    let visible = act.len() + 1;
    if visible < 3 {
        return Err(Error::Unreconstructable(format!("{visible} usable images, need 3")));
    }
    let want = ((settings.init_fraction * visible as f64).ceil() as usize).max(settings.init_min).min(visible);
    // the reference is always part of the selection; pairs are formed with the others
    let chosen: Vec<usize> = if want - 1 >= act.len() {
        act.clone()
    } else {
        let mut idx: Vec<usize> = sample(rng, act.len(), want - 1).into_iter().map(|i| act[i]).collect();
        idx.sort_unstable();
        idx
    };
    let mut best: Option<(f64, LocalShape)> = None;
    for &k in &chosen {
        let Some(set) = cv.candidates(k, settings.solver) else { continue };
        for s in set.shapes() {
            let r = cv.total_residual(s, active);
            if r.is_finite() && best.is_none_or(|b| r < b.0) {
                best = Some((r, s));
            }
        }
    }
    let (_, shape) = best.ok_or_else(|| Error::Unreconstructable("no pair produced a candidate".into()))?;
    let res: Vec<f64> = act.iter().map(|&k| cv.others[k].pair.eval(shape).l1()).collect();
    let med = median(&res).unwrap_or(0.0);
    let flagged = act
        .iter()
        .zip(&res)
        .filter(|(&k, &r)| r > settings.flag_factor * med && r > settings.flag_floor * cv.others[k].pair.max_coefficient())
        .map(|(&k, _)| k)
        .collect();
    Ok((shape, flagged))
}

/// Levenberg-Marquardt on (x, y) over the active, unflagged images. Returns the refined shape
/// and whether the iteration failed to reduce the cost (in which case `init` is returned).
pub fn refine_shape(cv: &CorrespondenceView, init: LocalShape, use_: &[bool], settings: &SolverSettings) -> (LocalShape, bool) {
    let mut s = init;
    let mut cost = cv.sum_squares(s, use_);
    if !cost.is_finite() {
        return (init, true);
    }
    let mut mu: Option<f64> = None;
    for _ in 0..settings.lm_max_iterations {
        if cost == 0.0 {
            break;
        }
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (o, _) in cv.others.iter().zip(use_).filter(|(_, &a)| a) {
            let r = o.pair.eval(s);
            let j = o.pair.jacobian(s);
            jtj += j.transpose() * j;
            jtr += j.transpose() * Vector2::new(r.ra, r.rb);
        }
        let m = *mu.get_or_insert(1e-3 * jtj[(0, 0)].max(jtj[(1, 1)]).max(f64::MIN_POSITIVE));
        let mut damp = m;
        let mut accepted = false;
        let mut step_norm = 0.0;
        for _ in 0..30 {
            let a = jtj + Matrix2::from_diagonal(&Vector2::new(damp, damp));
            let Some(inv) = a.try_inverse() else {
                damp *= 10.0;
                continue;
            };
            let step = -(inv * jtr);
            let cand = LocalShape::from_vector(s.to_vector() + step);
            let c = cv.sum_squares(cand, use_);
            step_norm = step.norm();
            if c.is_finite() && c < cost {
                s = cand;
                cost = c;
                mu = Some((damp / 3.0).max(1e-300));
                accepted = true;
                break;
            }
            if step_norm < settings.lm_step_tol {
                break;
            }
            damp *= 4.0;
        }
        if !accepted || step_norm < settings.lm_step_tol {
            break;
        }
    }
    (s, false)
}

/// Full base solver: initialize, flag, refine, and transfer the shape to the other images.
pub fn estimate_normals(
    cv: &CorrespondenceView,
    active: &[bool],
    settings: &SolverSettings,
    rng: &mut ChaCha8Rng,
) -> Result<NormalEstimate> {
    let (init, flagged) = initialize_shape(cv, active, settings, rng)?;
    let mut use_ = active.to_vec();
    for &k in &flagged {
        use_[k] = false;
    }
    let (shape, lm_failed) = refine_shape(cv, init, &use_, settings);
    let reference_normal = normal_from_shape(cv.point, shape)?;
    let mut shapes = Vec::with_capacity(cv.others.len());
    let mut normals = Vec::with_capacity(cv.others.len());
    for (o, &a) in cv.others.iter().zip(active) {
        let moved = if a { transfer_shape(shape, &o.diff).ok() } else { None };
        normals.push(moved.and_then(|m| normal_from_shape(o.point, m).ok()));
        shapes.push(moved);
    }
    Ok(NormalEstimate {
        reference_shape: shape,
        reference_normal,
        shapes,
        normals,
        flagged,
        residual: cv.total_residual(shape, &use_),
        lm_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cylinder, CylinderParams, SyntheticScene};

    fn view(scene: &SyntheticScene, t: usize, j: usize) -> CorrespondenceView {
        let pt = scene.points[t][j];
        let q = NormalizedPoint::new(pt.x / pt.z, pt.y / pt.z).unwrap();
        let others: Vec<_> = (0..scene.points.len())
            .filter(|&k| k != t)
            .map(|k| {
                let pk = scene.points[k][j];
                (k, scene.exact_differentials(k, t, Vector2::new(pk.x / pk.z, pk.y / pk.z)).unwrap())
            })
            .collect();
        CorrespondenceView::new(t, q, &others)
    }

    fn planar() -> SyntheticScene {
        let p = CylinderParams { noise_px: 0.0, radius_range: None, ..Default::default() };
        generate_cylinder(&p, 17).unwrap().0
    }

    #[test]
    fn exact_subset_initializes_at_truth() {
        let scene = planar();
        for solver in [BaseSolver::Substitution, BaseSolver::Resultant] {
            let settings = SolverSettings { solver, ..Default::default() };
            for j in (0..400).step_by(41) {
                let cv = view(&scene, 0, j);
                let active = vec![true; cv.others.len()];
                let (s, flags) = initialize_shape(&cv, &active, &settings, &mut rng_for(0, j as u64, 0)).unwrap();
                let t = scene.true_shape(0, j);
                assert!((s.x - t.x).abs() < 1e-4 && (s.y - t.y).abs() < 1e-4, "{solver:?} {s:?} {t:?}");
                assert!(flags.is_empty(), "{flags:?}");
            }
        }
    }

    #[test]
    fn refine_is_stationary_at_truth_and_recovers_from_offsets() {
        let scene = planar();
        let settings = SolverSettings::default();
        let j = 123;
        let cv = view(&scene, 2, j);
        let t = scene.true_shape(2, j);
        let use_ = vec![true; cv.others.len()];
        let (s, _) = refine_shape(&cv, t, &use_, &settings);
        assert!((s.x - t.x).abs() < 1e-8 && (s.y - t.y).abs() < 1e-8);
        let (s, failed) = refine_shape(&cv, LocalShape::new(t.x + 0.1, t.y - 0.1), &use_, &settings);
        assert!(!failed);
        assert!((s.x - t.x).abs() < 1e-6 && (s.y - t.y).abs() < 1e-6, "{s:?} {t:?}");
    }

    #[test]
    fn normals_transfer_to_every_image() {
        let scene = planar();
        let j = 77;
        let cv = view(&scene, 1, j);
        let active = vec![true; cv.others.len()];
        let est = estimate_normals(&cv, &active, &SolverSettings::default(), &mut rng_for(0, 77, 1)).unwrap();
        for (o, n) in cv.others.iter().zip(&est.normals) {
            let truth = scene.normals[o.image][j];
            assert!(n.unwrap().dot(&truth) > 1.0 - 1e-9);
        }
        assert!(est.reference_normal.dot(&scene.normals[1][j]) > 1.0 - 1e-9);
    }

    #[test]
    fn corrupted_image_is_flagged() {
        let scene = planar();
        let settings = SolverSettings::default();
        let mut hits = 0;
        let trials = 40;
        for j in 0..trials {
            let mut cv = view(&scene, 0, j * 9);
            // move the corrupted image's point by ~100 px but keep the clean warp
            let bad = 3;
            let d = cv.others[bad].diff;
            let shifted = NormalizedPoint::new(d.at.u + 60.0 / 1500.0, d.at.v - 80.0 / 1500.0).unwrap();
            let jet_d = scene.exact_differentials(cv.others[bad].image, 0, shifted.to_vector()).unwrap();
            cv.others[bad].pair = assemble_cubics(cv.point, &jet_d).unwrap();
            cv.others[bad].diff = jet_d;
            let active = vec![true; cv.others.len()];
            let (_, flags) = initialize_shape(&cv, &active, &settings, &mut rng_for(0, j as u64, 0)).unwrap();
            if flags.contains(&bad) {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn selection_size_uses_all_small_subsets() {
        let s = SolverSettings::default();
        let visible: usize = 7;
        let want = ((s.init_fraction * visible as f64).ceil() as usize).max(s.init_min).min(visible);
        assert_eq!(want, 7);
    }

    #[test]
    fn too_few_images_is_unreconstructable() {
        let scene = planar();
        let cv = view(&scene, 0, 5);
        let mut active = vec![false; cv.others.len()];
        active[0] = true;
        let r = initialize_shape(&cv, &active, &SolverSettings::default(), &mut rng_for(0, 0, 0));
        assert!(matches!(r, Err(Error::Unreconstructable(_))));
    }
}
