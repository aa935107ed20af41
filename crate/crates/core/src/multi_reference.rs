//! Reference consensus: reconstruct with every image as reference and keep the most
//! self-consistent one, dropping inconsistent images until agreement.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::LocalShape;
use crate::normal_solver::{estimate_normals, rng_for, CorrespondenceView, SolverSettings};
use crate::stats::{argmax, argmin, mean, median};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusSettings {
    /// Agreement threshold on G, degrees.
    pub epsilon_deg: f64,
    pub min_size: usize,
}

impl Default for ConsensusSettings {
    fn default() -> Self {
        Self { epsilon_deg: 5.0, min_size: 5 }
    }
}

/// Angle in degrees between two normals, ignoring orientation.
pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (a, b) = if a.dot(b) < 0.0 { (-a, *b) } else { (*a, *b) };
    a.cross(&b).norm().atan2(a.dot(&b)).to_degrees()
}

/// `normals[t][k]`: normal of image `images[k]` reconstructed with `images[t]` as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMatrix {
    pub images: Vec<usize>,
    pub normals: Vec<Vec<Option<Vector3<f64>>>>,
    pub shapes: Vec<Vec<Option<LocalShape>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyScores {
    pub s: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub g: f64,
}

/// Mean over images of the angle between the estimates of references `t` and `u`.
/// Infinite when the two rows share no image.
pub fn pairwise_inconsistency(v: &ReferenceMatrix, t: usize, u: usize) -> f64 {
    let angles: Vec<f64> = v.normals[t]
        .iter()
        .zip(&v.normals[u])
        .filter_map(|(a, b)| Some(angle_deg(a.as_ref()?, b.as_ref()?)))
        .collect();
    mean(&angles).unwrap_or(f64::INFINITY)
}

pub fn consistency_scores(v: &ReferenceMatrix) -> ConsistencyScores {
    let n = v.images.len();
    let mut s = vec![vec![0.0; n]; n];
    for t in 0..n {
        for u in t + 1..n {
            let a = pairwise_inconsistency(v, t, u);
            s[t][u] = a;
            s[u][t] = a;
        }
    }
    let u: Vec<f64> = (0..n)
        .map(|t| {
            if v.normals[t].iter().all(Option::is_none) {
                return f64::INFINITY;
            }
            let row: Vec<f64> = (0..n).filter(|&u| u != t).map(|u| s[t][u]).collect();
            median(&row).unwrap_or(f64::INFINITY)
        })
        .collect();
    let g = u.iter().copied().fold(f64::INFINITY, f64::min);
    ConsistencyScores { s, u, g }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSelection {
    pub reference: usize,
    /// Surviving images, ascending, with their normal and shape from the chosen reference.
    pub images: Vec<usize>,
    pub normals: Vec<Vector3<f64>>,
    pub shapes: Vec<LocalShape>,
    pub g: f64,
    pub iterations: usize,
}

/// Reconstructs the reference matrix restricted to `images`. `views` holds one view per
/// candidate image, each with its own image as reference.
pub fn reference_matrix(
    views: &[CorrespondenceView],
    images: &[usize],
    settings: &SolverSettings,
    subset: u64,
    track: u64,
) -> ReferenceMatrix {
    let n = images.len();
    let col = |img: usize| images.binary_search(&img).ok();
    let mut normals = vec![vec![None; n]; n];
    let mut shapes = vec![vec![None; n]; n];
    for (t, &img) in images.iter().enumerate() {
        let Some(cv) = views.iter().find(|cv| cv.reference == img) else { continue };
        let active: Vec<bool> = cv.others.iter().map(|o| col(o.image).is_some()).collect();
        let mut rng = rng_for(subset, track, img as u64);
        let Ok(est) = estimate_normals(cv, &active, settings, &mut rng) else { continue };
        normals[t][t] = Some(est.reference_normal);
        shapes[t][t] = Some(est.reference_shape);
        for (o, (n_k, s_k)) in cv.others.iter().zip(est.normals.iter().zip(&est.shapes)) {
            if let Some(k) = col(o.image) {
                normals[t][k] = *n_k;
                shapes[t][k] = *s_k;
            }
        }
    }
    ReferenceMatrix { images: images.to_vec(), normals, shapes }
}

/// Iterative consensus. Returns `None` when the image set shrinks below `min_size` first.
pub fn select_reference(
    views: &[CorrespondenceView],
    consensus: &ConsensusSettings,
    settings: &SolverSettings,
    subset: u64,
    track: u64,
) -> Option<ReferenceSelection> {
    let mut images: Vec<usize> = views.iter().map(|cv| cv.reference).collect();
    images.sort_unstable();
    images.dedup();
    consensus_loop(images, consensus, |imgs| reference_matrix(views, imgs, settings, subset, track))
}

/// The drop-until-consistent loop over any reference-matrix builder; `images` ascending.
pub fn consensus_loop(
    mut images: Vec<usize>,
    consensus: &ConsensusSettings,
    mut build: impl FnMut(&[usize]) -> ReferenceMatrix,
) -> Option<ReferenceSelection> {
    let mut iterations = 0;
    loop {
        if images.len() < consensus.min_size.max(3) {
            return None;
        }
        iterations += 1;
        let v = build(&images);
        let sc = consistency_scores(&v);
        if sc.g < consensus.epsilon_deg {
            let t = argmin(&sc.u)?;
            let keep: Vec<usize> =
                (0..images.len()).filter(|&k| v.normals[t][k].is_some() && v.shapes[t][k].is_some()).collect();
            return Some(ReferenceSelection {
                reference: images[t],
                images: keep.iter().map(|&k| images[k]).collect(),
                normals: keep.iter().map(|&k| v.normals[t][k].unwrap()).collect(),
                shapes: keep.iter().map(|&k| v.shapes[t][k].unwrap()).collect(),
                g: sc.g,
                iterations,
            });
        }
        let drop = argmax(&sc.u)?;
        images.remove(drop);
    }
}
