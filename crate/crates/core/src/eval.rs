//! Metrics against ground truth: depth and shape RMSE after one shared similarity gauge,
//! and correspondence classification rates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::multi_reference::angle_deg;
use crate::pipeline::PointEstimate;
use crate::synth::SyntheticScene;

/// Reference geometry `[image][track]` and injected-error flags `[track][image]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<Vec<Option<Vector3<f64>>>>,
    pub normals: Vec<Vec<Option<Vector3<f64>>>>,
    pub corrupted: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn from_scene(scene: &SyntheticScene) -> Self {
        Self {
            points: scene.points.iter().map(|c| c.iter().map(|p| Some(*p)).collect()).collect(),
            normals: scene.normals.iter().map(|c| c.iter().map(|n| Some(*n)).collect()).collect(),
            corrupted: scene.corrupted.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl Counts {
    /// Rates with positives = correct correspondences; an empty class gives rate 1 for itself.
    pub fn rates(&self) -> Rates {
        let p = self.tp + self.fn_;
        let n = self.tn + self.fp;
        let tpr = if p == 0 { 1.0 } else { self.tp as f64 / p as f64 };
        let tnr = if n == 0 { 1.0 } else { self.tn as f64 / n as f64 };
        Rates { tpr, tnr, fpr: 1.0 - tnr, fnr: 1.0 - tpr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub failed: bool,
    pub evaluated_points: usize,
    /// Similarity gauge applied to the estimates: x ↦ scale·x + translation.
    pub scale: f64,
    pub translation: Vector3<f64>,
    #[serde(with = "crate::io::nullable_f64")]
    pub depth_rmse_mm: f64,
    #[serde(with = "crate::io::nullable_f64")]
    pub shape_rmse_deg: f64,
    pub per_image_depth_rmse_mm: Vec<Option<f64>>,
    pub per_image_shape_rmse_deg: Vec<Option<f64>>,
    pub counts: Counts,
    pub rates: Rates,
}

/// Scale and translation minimizing Σ‖c·x + t − g‖².
pub fn align_similarity(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> (f64, Vector3<f64>) {
    let n = est.len() as f64;
    let me = est.iter().sum::<Vector3<f64>>() / n;
    let mg = gt.iter().sum::<Vector3<f64>>() / n;
    let num: f64 = est.iter().zip(gt).map(|(e, g)| (e - me).dot(&(g - mg))).sum();
    let den: f64 = est.iter().map(|e| (e - me).norm_squared()).sum();
    let c = if den > 0.0 { num / den } else { 1.0 };
    (c, mg - me * c)
}

fn rms(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt())
}

/// Geometry metrics use the estimates flagged inlier; rates use every visible observation's label.
pub fn evaluate(estimates: &[Vec<Option<PointEstimate>>], labels: &[Vec<Option<bool>>], gt: &GroundTruth) -> EvalReport {
    let mut pairs: Vec<(usize, Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for (i, img) in estimates.iter().enumerate() {
        for (j, e) in img.iter().enumerate() {
            let Some(e) = e.filter(|e| e.inlier) else { continue };
            let (Some(p), Some(n)) = (gt.points.get(i).and_then(|c| c.get(j)).copied().flatten(), gt.normals.get(i).and_then(|c| c.get(j)).copied().flatten())
            else {
                continue;
            };
            pairs.push((i, e.point, p, e.normal, n));
        }
    }
    let mut counts = Counts::default();
    for (j, row) in labels.iter().enumerate() {
        for (i, l) in row.iter().enumerate() {
            let Some(l) = l else { continue };
            let truth = !gt.corrupted.get(j).and_then(|r| r.get(i)).copied().unwrap_or(false);
            match (truth, *l) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
                (false, true) => counts.fp += 1,
            }
        }
    }
    let n_images = estimates.len();
    if pairs.is_empty() {
        return EvalReport {
            failed: true,
            evaluated_points: 0,
            scale: 1.0,
            translation: Vector3::zeros(),
            depth_rmse_mm: f64::INFINITY,
            shape_rmse_deg: f64::INFINITY,
            per_image_depth_rmse_mm: vec![None; n_images],
            per_image_shape_rmse_deg: vec![None; n_images],
            counts,
            rates: counts.rates(),
        };
    }
    let est: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let truth: Vec<_> = pairs.iter().map(|p| p.2).collect();
    let (scale, translation) = align_similarity(&est, &truth);
    let dists: Vec<f64> = pairs.iter().map(|p| (p.1 * scale + translation - p.2).norm()).collect();
    let angles: Vec<f64> = pairs.iter().map(|p| angle_deg(&p.3, &p.4)).collect();
    let per = |v: &[f64]| -> Vec<Option<f64>> {
        (0..n_images)
            .map(|i| {
                let sel: Vec<f64> = pairs.iter().zip(v).filter(|(p, _)| p.0 == i).map(|(_, x)| *x).collect();
                rms(&sel)
            })
            .collect()
    };
    EvalReport {
        failed: false,
        evaluated_points: pairs.len(),
        scale,
        translation,
        depth_rmse_mm: rms(&dists).unwrap(),
        shape_rmse_deg: rms(&angles).unwrap(),
        per_image_depth_rmse_mm: per(&dists),
        per_image_shape_rmse_deg: per(&angles),
        counts,
        rates: counts.rates(),
    }
}
