//! End-to-end reconstruction: robust warps, per-track reference consensus, integration,
//! scale estimation and isometric filtering, over one or more image subsets.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, LocalShape, NormalizedPoint};
use crate::integration::integrate;
use crate::isometry::{build_nng, classify_inliers, estimate_scales, FilterSettings, PointLabel};
use crate::multi_reference::{select_reference, ConsensusSettings, ReferenceSelection};
use crate::normal_solver::{estimate_normals, rng_for, BaseSolver, CorrespondenceView, SolverSettings};
use crate::stats::argmax;
use crate::warp::{
    fit_warp_with, robust_fit_mad, warp_differentials, FitOptions, InlierRecord, PixelScale, Smoother, Warp, MIN_CORRESPONDENCES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Wide,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub solver: BaseSolver,
    pub baseline: Baseline,
    /// Images per subset in wide-baseline mode.
    pub subset_size: usize,
    pub short_subset_size: usize,
    pub short_references: usize,
    /// Smoothing weight of the warps whose derivatives feed the reconstruction equations.
    pub lambda: f64,
    /// Lighter smoothing weight of the robust MAD fits, which only flag observations.
    pub mad_lambda: f64,
    pub smoother: Smoother,
    /// Refit every pair warp on the observations no pair majority flagged, instead of on
    /// that pair's own MAD inliers.
    pub consensus_refit: bool,
    /// MAD stopping tolerance as a fraction of the image diagonal.
    pub mad_delta_fraction: f64,
    /// An observation is a warp outlier when rejected by more than this fraction of its pair fits.
    pub mad_majority: f64,
    pub flag_factor: f64,
    pub epsilon_deg: f64,
    pub min_images: usize,
    pub neighbors: usize,
    pub isometry_threshold: f64,
    pub inlier_fraction: f64,
    pub hallucinate_grid: bool,
    pub grid_size: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: BaseSolver::Resultant,
            baseline: Baseline::Wide,
            subset_size: 7,
            short_subset_size: 35,
            short_references: 7,
            lambda: crate::warp::DEFAULT_LAMBDA,
            mad_lambda: crate::warp::MAD_LAMBDA,
            smoother: Smoother::Bending,
            consensus_refit: true,
            mad_delta_fraction: 1e-3,
            mad_majority: 0.5,
            flag_factor: 10.0,
            epsilon_deg: 5.0,
            min_images: 5,
            neighbors: 20,
            isometry_threshold: 0.10,
            inlier_fraction: 0.5,
            hallucinate_grid: false,
            grid_size: 20,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions { lambda: self.lambda, smoother: self.smoother, ..FitOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.subset_size < 3 || self.short_subset_size < 3 {
            return bad("subset size must be at least 3");
        }
        if self.short_references < 3 || self.short_references > self.short_subset_size {
            return bad("short-baseline references must be between 3 and the subset size");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite() && self.mad_lambda >= 0.0 && self.mad_lambda.is_finite()) {
            return bad("lambda and mad_lambda must be finite and non-negative");
        }
        if !(self.mad_delta_fraction > 0.0) || !(0.0..1.0).contains(&self.mad_majority) {
            return bad("MAD settings out of range");
        }
        if !(self.flag_factor > 0.0) || !(self.epsilon_deg > 0.0) {
            return bad("flag factor and epsilon must be positive");
        }
        if self.neighbors == 0 || !(self.isometry_threshold > 0.0) || !(0.0..1.0).contains(&self.inlier_fraction) {
            return bad("isometry filter settings out of range");
        }
        if self.hallucinate_grid && self.grid_size < 2 {
            return bad("grid size must be at least 2");
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings { solver: self.solver, flag_factor: self.flag_factor, ..SolverSettings::default() }
    }

    pub fn consensus(&self) -> ConsensusSettings {
        ConsensusSettings { epsilon_deg: self.epsilon_deg, min_size: self.min_images }
    }

    pub fn filter(&self) -> FilterSettings {
        FilterSettings { neighbors: self.neighbors, threshold: self.isometry_threshold, min_fraction: self.inlier_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub images: Vec<usize>,
    /// Images tried as reference; all of `images` in wide-baseline mode.
    pub references: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub baseline: Baseline,
    pub subsets: Vec<Subset>,
}

/// Overlapping windows of consecutive images; consecutive windows share at least one image.
fn windows(n: usize, m: usize) -> Vec<Vec<usize>> {
    if n <= m {
        return vec![(0..n).collect()];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let s = start.min(n - m);
        out.push((s..s + m).collect());
        if s + m >= n {
            return out;
        }
        start = s + m - 1;
    }
}

impl SubsetPlan {
    pub fn new(n_images: usize, config: &PipelineConfig) -> Result<Self> {
        if n_images < 3 {
            return Err(Error::InvalidInput(format!("{n_images} images, need at least 3")));
        }
        let subsets = match config.baseline {
            Baseline::Wide => windows(n_images, config.subset_size)
                .into_iter()
                .map(|images| Subset { references: images.clone(), images })
                .collect(),
            Baseline::Short => windows(n_images, config.short_subset_size)
                .into_iter()
                .map(|images| {
                    let r = config.short_references.min(images.len());
                    let mut references: Vec<usize> = (0..r)
                        .map(|i| images[((i * (images.len() - 1)) as f64 / (r - 1) as f64).round() as usize])
                        .collect();
                    references.dedup();
                    Subset { images, references }
                })
                .collect(),
        };
        Ok(Self { baseline: config.baseline, subsets })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warp,
    Normals,
    Integration,
    Filter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub subset: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub track: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image: Option<usize>,
    pub message: String,
}

/// Reconstructed surface point of one track in one image, in the gauge of the first image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub shape: LocalShape,
    pub inlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub reference: Option<usize>,
    pub images: Vec<usize>,
    pub label: PointLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub images: Vec<usize>,
    pub references: Vec<usize>,
    pub anchor: Option<usize>,
    #[serde(with = "crate::io::nullable_f64")]
    pub gauge_factor: f64,
    pub reconstructed_tracks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub warps_s: f64,
    pub normals_s: f64,
    pub integration_s: f64,
    pub filter_s: f64,
    pub total_s: f64,
    /// Median wall time of one base-solver pair solve, seconds.
    pub pair_solve_median_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub plan: SubsetPlan,
    pub n_images: usize,
    pub n_tracks: usize,
    /// Relative scale α per image.
    pub scales: Vec<Option<f64>>,
    /// `[image][track]`.
    pub estimates: Vec<Vec<Option<PointEstimate>>>,
    /// `[track][image]`: `Some(true)` for observations classified as correct correspondences.
    pub labels: Vec<Vec<Option<bool>>>,
    pub tracks: Vec<TrackSummary>,
    pub subsets: Vec<SubsetSummary>,
    /// Hallucinated grid points per image (reconstruction density only, never evaluated).
    pub grid: Vec<Vec<PointEstimate>>,
    pub failures: Vec<Failure>,
    pub timings: Timings,
}

impl PipelineOutput {
    pub fn reconstructed_count(&self) -> usize {
        self.estimates.iter().flatten().flatten().count()
    }
}

struct PairFit {
    warp: Warp,
    tracks: Vec<usize>,
    record: InlierRecord,
}

/// One track's consensus result inside a subset.
#[derive(Debug, Clone)]
struct TrackStep {
    reference: usize,
    images: Vec<usize>,
    normals: Vec<Vector3<f64>>,
    shapes: Vec<LocalShape>,
}

struct SubsetResult {
    steps: Vec<Option<TrackStep>>,
    // [local image][track]
    clouds: Vec<Vec<Option<Vector3<f64>>>>,
    alpha: Vec<Option<f64>>,
    labels: Vec<PointLabel>,
    anchor: Option<usize>,
    grid: Vec<Vec<(Vector3<f64>, Vector3<f64>, LocalShape)>>,
    pair_times: Vec<f64>,
}

fn fit_pairs(
    subset: &Subset,
    pts: &[Vec<Option<NormalizedPoint>>],
    k: &CameraIntrinsics,
    config: &PipelineConfig,
    failures: &mut Vec<Failure>,
    subset_id: usize,
) -> HashMap<(usize, usize), PairFit> {
    let pairs: Vec<(usize, usize)> = subset
        .images
        .iter()
        .flat_map(|&a| subset.images.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
        .collect();
    let opts = FitOptions { lambda: config.mad_lambda, ..FitOptions::default() };
    let delta = config.mad_delta_fraction * k.diagonal_px();
    let px = PixelScale { fx: k.fx, fy: k.fy };
    let fits: Vec<_> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let tracks: Vec<usize> = (0..pts.len()).filter(|&j| pts[j][a].is_some() && pts[j][b].is_some()).collect();
            let src: Vec<Vector2<f64>> = tracks.iter().map(|&j| pts[j][a].unwrap().to_vector()).collect();
            let dst: Vec<Vector2<f64>> = tracks.iter().map(|&j| pts[j][b].unwrap().to_vector()).collect();
            robust_fit_mad(&src, &dst, &opts, delta, px).map(|(warp, record)| PairFit { warp, tracks, record })
        })
        .collect();
    let mut out = HashMap::new();
    for (&(a, b), fit) in pairs.iter().zip(fits) {
        match fit {
            Ok(f) => {
                out.insert((a, b), f);
            }
            Err(e) => failures.push(Failure {
                stage: Stage::Warp,
                subset: subset_id,
                track: None,
                image: Some(a),
                message: format!("warp {a}->{b}: {e}"),
            }),
        }
    }
    out
}

/// `[track][image]` warp-outlier flags: rejected by more than `majority` of the pair fits that
/// involve the image.
fn mad_flags(subset: &Subset, n_tracks: usize, fits: &HashMap<(usize, usize), PairFit>, majority: f64) -> Vec<Vec<bool>> {
    let n_images = subset.images.iter().max().map_or(0, |m| m + 1);
    let mut used = vec![vec![0u32; n_images]; n_tracks];
    let mut rejected = vec![vec![0u32; n_images]; n_tracks];
    let mut keys: Vec<_> = fits.keys().copied().collect();
    keys.sort_unstable();
    for (a, b) in keys {
        let f = &fits[&(a, b)];
        for (local, &j) in f.tracks.iter().enumerate() {
            let out = !f.record.is_inlier(local);
            for img in [a, b] {
                used[j][img] += 1;
                rejected[j][img] += out as u32;
            }
        }
    }
    (0..n_tracks)
        .map(|j| (0..n_images).map(|i| used[j][i] > 0 && rejected[j][i] as f64 > majority * used[j][i] as f64).collect())
        .collect()
}

/// Refits each warp at the equation smoothing weight, with weight 1 on tracks unflagged in both
/// of its images, or on the pair's own MAD inliers without `consensus`. A pair keeps its MAD
/// warp when too few such tracks remain.
fn refit_pairs(
    fits: &mut HashMap<(usize, usize), PairFit>,
    flags: &[Vec<bool>],
    pts: &[Vec<Option<NormalizedPoint>>],
    config: &PipelineConfig,
) {
    let opts = config.fit_options();
    let flagged = |j: usize, i: usize| flags[j].get(i).copied().unwrap_or(false);
    let consensus = config.consensus_refit;
    fits.par_iter_mut().for_each(|(&(a, b), f)| {
        let src: Vec<Vector2<f64>> = f.tracks.iter().map(|&j| pts[j][a].unwrap().to_vector()).collect();
        let dst: Vec<Vector2<f64>> = f.tracks.iter().map(|&j| pts[j][b].unwrap().to_vector()).collect();
        let w: Vec<f64> = f
            .tracks
            .iter()
            .enumerate()
            .map(|(local, &j)| {
                let keep = if consensus { !flagged(j, a) && !flagged(j, b) } else { f.record.is_inlier(local) };
                if keep { 1.0 } else { 0.0 }
            })
            .collect();
        if w.iter().filter(|&&x| x > 0.0).count() < MIN_CORRESPONDENCES {
            return;
        }
        match fit_warp_with(&src, &dst, &w, &opts) {
            Ok(warp) => f.warp = warp,
            Err(e) => log::debug!("consensus refit {a}->{b} kept the MAD warp: {e}"),
        }
    });
}

fn build_views(
    images: &[usize],
    references: &[usize],
    points: &[Option<NormalizedPoint>],
    fits: &HashMap<(usize, usize), PairFit>,
) -> Vec<CorrespondenceView> {
    references
        .iter()
        .filter(|t| images.contains(t))
        .map(|&t| {
            let others: Vec<_> = images
                .iter()
                .filter(|&&k| k != t)
                .filter_map(|&k| {
                    let w = &fits.get(&(k, t))?.warp;
                    Some((k, warp_differentials(w, points[k]?).ok()?))
                })
                .collect();
            CorrespondenceView::new(t, points[t].unwrap(), &others)
        })
        .collect()
}

/// Consensus over the candidate references, then the chosen reference's estimate over every
/// image that was not dropped.
fn track_step(
    mut views: Vec<CorrespondenceView>,
    images: &[usize],
    config: &PipelineConfig,
    rng_subset: u64,
    track: u64,
) -> std::result::Result<(TrackStep, Vec<f64>), String> {
    let settings = config.solver_settings();
    let mut times = Vec::new();
    for cv in &mut views {
        let start = Instant::now();
        cv.solve_pairs(settings.solver);
        if !cv.others.is_empty() {
            times.push(start.elapsed().as_secs_f64() / cv.others.len() as f64);
        }
    }
    let sel: ReferenceSelection = select_reference(&views, &config.consensus(), &settings, rng_subset, track)
        .ok_or_else(|| "no consistent reference".to_string())?;
    let refs: Vec<usize> = views.iter().map(|v| v.reference).collect();
    if images.iter().all(|i| refs.contains(i)) {
        return Ok((TrackStep { reference: sel.reference, images: sel.images, normals: sel.normals, shapes: sel.shapes }, times));
    }
    // short baseline: non-reference images come from the chosen reference's own solve
    let cv = views.iter().find(|v| v.reference == sel.reference).unwrap();
    let keep = |i: usize| !refs.contains(&i) || sel.images.contains(&i);
    let active: Vec<bool> = cv.others.iter().map(|o| keep(o.image)).collect();
    let est = estimate_normals(cv, &active, &settings, &mut rng_for(rng_subset, track, sel.reference as u64)).map_err(|e| e.to_string())?;
    let mut rows: Vec<(usize, Vector3<f64>, LocalShape)> = vec![(cv.reference, est.reference_normal, est.reference_shape)];
    for (o, (n, s)) in cv.others.iter().zip(est.normals.iter().zip(&est.shapes)) {
        if let (Some(n), Some(s)) = (n, s) {
            rows.push((o.image, *n, *s));
        }
    }
    rows.sort_by_key(|r| r.0);
    Ok((
        TrackStep {
            reference: sel.reference,
            images: rows.iter().map(|r| r.0).collect(),
            normals: rows.iter().map(|r| r.1).collect(),
            shapes: rows.iter().map(|r| r.2).collect(),
        },
        times,
    ))
}

fn rng_subset(seed: u64, subset: usize) -> u64 {
    seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ subset as u64
}

/// Grid correspondences: a regular grid over the anchor's point bounding box, mapped into every
/// other image of the subset with the fitted warps.
fn grid_tracks(
    subset: &Subset,
    anchor: usize,
    pts: &[Vec<Option<NormalizedPoint>>],
    fits: &HashMap<(usize, usize), PairFit>,
    n: usize,
) -> Vec<Vec<Option<NormalizedPoint>>> {
    let seen: Vec<Vector2<f64>> = pts.iter().filter_map(|t| t[anchor]).map(|p| p.to_vector()).collect();
    if seen.is_empty() {
        return Vec::new();
    }
    let (mut lo, mut hi) = (seen[0], seen[0]);
    for p in &seen {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let n_images = pts.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let g = Vector2::new(
                lo.x + (hi.x - lo.x) * a as f64 / (n - 1) as f64,
                lo.y + (hi.y - lo.y) * b as f64 / (n - 1) as f64,
            );
            let mut row = vec![None; n_images];
            row[anchor] = NormalizedPoint::from_vector(g).ok();
            for &k in &subset.images {
                if k != anchor {
                    if let Some(f) = fits.get(&(anchor, k)) {
                        row[k] = NormalizedPoint::from_vector(f.warp.eval(g)).ok();
                    }
                }
            }
            out.push(row);
        }
    }
    out
}

fn run_subset(
    subset_id: usize,
    subset: &Subset,
    pts: &[Vec<Option<NormalizedPoint>>],
    k: &CameraIntrinsics,
    config: &PipelineConfig,
    failures: &mut Vec<Failure>,
    timings: &mut Timings,
) -> SubsetResult {
    let n_tracks = pts.len();
    let t0 = Instant::now();
    let mut fits = fit_pairs(subset, pts, k, config, failures, subset_id);
    let flags = mad_flags(subset, n_tracks, &fits, config.mad_majority);
    refit_pairs(&mut fits, &flags, pts, config);
    timings.warps_s += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let rs = rng_subset(config.seed, subset_id);
    let min_images = config.min_images.max(3);
    let results: Vec<_> = (0..n_tracks)
        .into_par_iter()
        .map(|j| {
            let clean: Vec<usize> =
                subset.images.iter().copied().filter(|&i| pts[j][i].is_some() && !flags[j].get(i).copied().unwrap_or(false)).collect();
            if clean.len() < min_images {
                return Err(format!("{} clean observations, need {min_images}", clean.len()));
            }
            let views = build_views(&clean, &subset.references, &pts[j], &fits);
            track_step(views, &clean, config, rs, j as u64)
        })
        .collect();
    let mut pair_times = Vec::new();
    let steps: Vec<Option<TrackStep>> = results
        .into_iter()
        .enumerate()
        .map(|(j, r)| match r {
            Ok((s, t)) => {
                pair_times.extend(t);
                Some(s)
            }
            Err(message) => {
                failures.push(Failure { stage: Stage::Normals, subset: subset_id, track: Some(j), image: None, message });
                None
            }
        })
        .collect();
    let mut votes = vec![0.0; subset.images.iter().max().map_or(0, |m| m + 1)];
    for s in steps.iter().flatten() {
        votes[s.reference] += 1.0;
    }
    let anchor = steps.iter().any(Option::is_some).then(|| argmax(&votes)).flatten();

    let grid_steps: Vec<(Vec<Option<NormalizedPoint>>, TrackStep)> = match (config.hallucinate_grid, anchor) {
        (true, Some(a)) => {
            let g = grid_tracks(subset, a, pts, &fits, config.grid_size);
            let res: Vec<_> = g
                .into_par_iter()
                .enumerate()
                .filter_map(|(gi, row)| {
                    let images: Vec<usize> = subset.images.iter().copied().filter(|&i| row[i].is_some()).collect();
                    if images.len() < min_images {
                        return None;
                    }
                    let views = build_views(&images, &subset.references, &row, &fits);
                    let step = track_step(views, &images, config, rs ^ 0x6772_6964, gi as u64).ok()?.0;
                    Some((row, step))
                })
                .collect();
            res
        }
        _ => Vec::new(),
    };
    timings.normals_s += t1.elapsed().as_secs_f64();

    // integration per image over real and grid samples
    let t2 = Instant::now();
    let m = subset.images.len();
    let mut clouds = vec![vec![None; n_tracks]; m];
    let mut grid = vec![Vec::new(); m];
    for (li, &img) in subset.images.iter().enumerate() {
        let mut samples: Vec<(NormalizedPoint, LocalShape, Option<usize>, Vector3<f64>)> = Vec::new();
        for (j, s) in steps.iter().enumerate() {
            if let Some(s) = s {
                if let Ok(pos) = s.images.binary_search(&img) {
                    samples.push((pts[j][img].unwrap(), s.shapes[pos], Some(j), s.normals[pos]));
                }
            }
        }
        for (row, s) in &grid_steps {
            if let Ok(pos) = s.images.binary_search(&img) {
                samples.push((row[img].unwrap(), s.shapes[pos], None, s.normals[pos]));
            }
        }
        let p: Vec<NormalizedPoint> = samples.iter().map(|s| s.0).collect();
        let sh: Vec<LocalShape> = samples.iter().map(|s| s.1).collect();
        match integrate(&p, &sh) {
            Ok(surf) => {
                if surf.n_components > 1 {
                    failures.push(Failure {
                        stage: Stage::Integration,
                        subset: subset_id,
                        track: None,
                        image: Some(img),
                        message: format!("{} disconnected components with independent scales", surf.n_components),
                    });
                }
                for (s, x) in samples.iter().zip(&surf.points) {
                    match s.2 {
                        Some(j) => clouds[li][j] = Some(*x),
                        None => grid[li].push((*x, s.3, s.1)),
                    }
                }
            }
            Err(e) => failures.push(Failure {
                stage: Stage::Integration,
                subset: subset_id,
                track: None,
                image: Some(img),
                message: e.to_string(),
            }),
        }
    }
    timings.integration_s += t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let (alpha, labels) = match anchor {
        Some(a) => {
            let anchor_pts: Vec<Option<NormalizedPoint>> =
                (0..n_tracks).map(|j| steps[j].as_ref().and(pts[j][a])).collect();
            let graph = build_nng(&anchor_pts, config.neighbors);
            let gauge = (0..m).find(|&li| clouds[li].iter().any(Option::is_some)).unwrap_or(0);
            let scales = estimate_scales(&clouds, &graph, gauge);
            for (li, a) in scales.alpha.iter().enumerate() {
                if a.is_none() && clouds[li].iter().any(Option::is_some) {
                    failures.push(Failure {
                        stage: Stage::Filter,
                        subset: subset_id,
                        track: None,
                        image: Some(subset.images[li]),
                        message: "no scale path to the gauge image".into(),
                    });
                }
            }
            let c = classify_inliers(&clouds, &graph, &scales, &config.filter());
            (scales.alpha, c.labels)
        }
        None => (vec![None; m], vec![PointLabel::Undetermined; n_tracks]),
    };
    timings.filter_s += t3.elapsed().as_secs_f64();
    SubsetResult { steps, clouds, alpha, labels, anchor, grid, pair_times }
}

/// Runs every subset of the plan and merges the results image by image: each image is taken
/// from the first subset containing it, with subset gauges chained through shared images.
pub fn run_pipeline(cs: &CorrespondenceSet, k: &CameraIntrinsics, config: &PipelineConfig) -> Result<PipelineOutput> {
    let start = Instant::now();
    config.validate()?;
    k.validate()?;
    let plan = SubsetPlan::new(cs.n_images(), config)?;
    let pts = cs.normalized(k)?;
    let n_images = cs.n_images();
    let n_tracks = cs.n_tracks();
    let mut failures = Vec::new();
    let mut timings = Timings::default();

    let mut owner: Vec<Option<(usize, usize)>> = vec![None; n_images];
    let mut global_alpha: Vec<Option<f64>> = vec![None; n_images];
    let mut results = Vec::new();
    let mut summaries = Vec::new();
    let mut pair_times = Vec::new();
    for (sid, subset) in plan.subsets.iter().enumerate() {
        let r = run_subset(sid, subset, &pts, k, config, &mut failures, &mut timings);
        // chain this subset's gauge through the first already-scaled shared image
        let factor = subset
            .images
            .iter()
            .enumerate()
            .find_map(|(li, &img)| Some(global_alpha[img]? / r.alpha[li]?))
            .unwrap_or(1.0);
        for (li, &img) in subset.images.iter().enumerate() {
            if owner[img].is_none() {
                owner[img] = Some((sid, li));
                global_alpha[img] = r.alpha[li].map(|a| a * factor);
            }
        }
        summaries.push(SubsetSummary {
            images: subset.images.clone(),
            references: subset.references.clone(),
            anchor: r.anchor,
            gauge_factor: factor,
            reconstructed_tracks: r.steps.iter().flatten().count(),
        });
        pair_times.extend_from_slice(&r.pair_times);
        results.push(r);
    }

    let mut estimates = vec![vec![None; n_tracks]; n_images];
    let mut labels = vec![vec![None; n_images]; n_tracks];
    let mut grid = vec![Vec::new(); n_images];
    for img in 0..n_images {
        let Some((sid, li)) = owner[img] else { continue };
        let r = &results[sid];
        for j in 0..n_tracks {
            if pts[j][img].is_none() {
                continue;
            }
            let step = r.steps[j].as_ref().and_then(|s| s.images.binary_search(&img).ok().map(|p| (s, p)));
            let inlier = step.is_some() && r.labels[j] == PointLabel::Inlier;
            labels[j][img] = Some(inlier);
            if let (Some((s, p)), Some(x), Some(a)) = (step, r.clouds[li][j], global_alpha[img]) {
                estimates[img][j] = Some(PointEstimate { point: x / a, normal: s.normals[p], shape: s.shapes[p], inlier });
            }
        }
        if let Some(a) = global_alpha[img] {
            grid[img] = r.grid[li].iter().map(|&(x, n, s)| PointEstimate { point: x / a, normal: n, shape: s, inlier: true }).collect();
        }
    }
    let tracks = (0..n_tracks)
        .map(|j| {
            let r = &results[0];
            match &r.steps[j] {
                Some(s) => TrackSummary { reference: Some(s.reference), images: s.images.clone(), label: r.labels[j] },
                None => TrackSummary { reference: None, images: Vec::new(), label: PointLabel::Undetermined },
            }
        })
        .collect();
    timings.pair_solve_median_s = crate::stats::median(&pair_times).unwrap_or(0.0);
    timings.total_s = start.elapsed().as_secs_f64();
    Ok(PipelineOutput {
        config: config.clone(),
        plan,
        n_images,
        n_tracks,
        scales: global_alpha,
        estimates,
        labels,
        tracks,
        subsets: summaries,
        grid,
        failures,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sets_use_one_subset() {
        let plan = SubsetPlan::new(7, &PipelineConfig::default()).unwrap();
        assert_eq!(plan.subsets.len(), 1);
        assert_eq!(plan.subsets[0].images, (0..7).collect::<Vec<_>>());
        assert_eq!(plan.subsets[0].references, plan.subsets[0].images);
    }

    #[test]
    fn windows_cover_and_overlap() {
        for n in 3..60 {
            for m in 3..12 {
                let w = windows(n, m);
                let mut seen = vec![false; n];
                for win in &w {
                    assert_eq!(win.len(), m.min(n));
                    win.iter().for_each(|&i| seen[i] = true);
                }
                assert!(seen.iter().all(|&s| s));
                for pair in w.windows(2) {
                    assert!(pair[0].iter().any(|i| pair[1].contains(i)));
                }
            }
        }
    }

    #[test]
    fn short_baseline_references_are_uniform() {
        let config = PipelineConfig { baseline: Baseline::Short, ..Default::default() };
        let plan = SubsetPlan::new(40, &config).unwrap();
        assert_eq!(plan.subsets[0].images.len(), 35);
        assert_eq!(plan.subsets[0].references, vec![0, 6, 11, 17, 23, 28, 34]);
    }

    #[test]
    fn too_few_images_rejected() {
        assert!(SubsetPlan::new(2, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn config_defaults_round_trip_through_json() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
        let partial: PipelineConfig = serde_json::from_str(r#"{"solver":"substitution","seed":9}"#).unwrap();
        assert_eq!(partial.solver, BaseSolver::Substitution);
        assert_eq!(partial.subset_size, 7);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus":1}"#).is_err());
    }
}
