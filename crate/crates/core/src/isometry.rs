//! Relative scales between per-image clouds and isometric-consistency labelling of points.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::NormalizedPoint;
use crate::integration::knn;
use crate::stats::{mean, median};

pub const DEFAULT_NEIGHBORS: usize = 20;
pub const MIN_DISTANCE: f64 = 1e-12;
pub const MIN_EVALUABLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub neighbors: usize,
    /// Distance variation threshold relative to the mean neighbourhood distance.
    pub threshold: f64,
    /// Inlier when the consistent fraction exceeds this.
    pub min_fraction: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { neighbors: DEFAULT_NEIGHBORS, threshold: 0.10, min_fraction: 0.5 }
    }
}

/// `neighbors[j]`: nearest tracks of track `j` in the anchor image, empty for tracks without
/// an anchor point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
}

pub fn build_nng(anchor: &[Option<NormalizedPoint>], r: usize) -> NeighborGraph {
    let present: Vec<usize> = (0..anchor.len()).filter(|&j| anchor[j].is_some()).collect();
    let pts: Vec<NormalizedPoint> = present.iter().map(|&j| anchor[j].unwrap()).collect();
    let mut neighbors = vec![Vec::new(); anchor.len()];
    for (local, nb) in knn(&pts, r).into_iter().enumerate() {
        neighbors[present[local]] = nb.into_iter().map(|l| present[l]).collect();
    }
    NeighborGraph { neighbors }
}

/// `clouds[i][j]`: point of track `j` in image `i`'s up-to-scale cloud.
pub type Clouds = [Vec<Option<Vector3<f64>>>];

fn distance(cloud: &[Option<Vector3<f64>>], j: usize, l: usize) -> Option<f64> {
    Some((cloud[j]? - cloud[l]?).norm())
}

/// Median of P^b / P^a over neighbour edges reconstructed in both images.
pub fn pairwise_scale(clouds: &Clouds, graph: &NeighborGraph, a: usize, b: usize) -> Option<f64> {
    let mut ratios = Vec::new();
    for (j, nb) in graph.neighbors.iter().enumerate() {
        for &l in nb {
            if let (Some(pa), Some(pb)) = (distance(&clouds[a], j, l), distance(&clouds[b], j, l)) {
                if pa >= MIN_DISTANCE {
                    ratios.push(pb / pa);
                }
            }
        }
    }
    median(&ratios).filter(|r| *r > 0.0 && r.is_finite())
}

/// α per image relative to the gauge image; `None` for images with no path to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub gauge: usize,
    pub alpha: Vec<Option<f64>>,
}

impl ScaleSet {
    pub fn single(n: usize, gauge: usize) -> Self {
        let mut alpha = vec![None; n];
        alpha[gauge] = Some(1.0);
        Self { gauge, alpha }
    }
}

/// Breadth-first propagation from `gauge` over edges `ratio[a][b] = α_b / α_a`, visiting
/// neighbours in ascending index.
pub fn propagate_scales(ratio: &[Vec<Option<f64>>], gauge: usize) -> ScaleSet {
    let n = ratio.len();
    let mut s = ScaleSet::single(n, gauge);
    let mut queue = VecDeque::from([gauge]);
    while let Some(a) = queue.pop_front() {
        let base = s.alpha[a].unwrap();
        for b in 0..n {
            if s.alpha[b].is_none() {
                if let Some(r) = ratio[a][b] {
                    s.alpha[b] = Some(base * r);
                    queue.push_back(b);
                }
            }
        }
    }
    s
}

/// Direct ratio to the gauge image where the two share edges, otherwise propagated.
pub fn estimate_scales(clouds: &Clouds, graph: &NeighborGraph, gauge: usize) -> ScaleSet {
    let n = clouds.len();
    let mut ratio = vec![vec![None; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            if let Some(r) = pairwise_scale(clouds, graph, a, b) {
                ratio[a][b] = Some(r);
                ratio[b][a] = Some(1.0 / r);
            }
        }
    }
    propagate_scales(&ratio, gauge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Inlier,
    Outlier,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<PointLabel>,
    pub consistent_fraction: Vec<f64>,
}

/// Labels each track by how often its rescaled neighbour distances stay within
/// `threshold` × the mean per-edge median distance.
pub fn classify_inliers(clouds: &Clouds, graph: &NeighborGraph, scales: &ScaleSet, settings: &FilterSettings) -> Classification {
    let n_tracks = graph.neighbors.len();
    let mut labels = Vec::with_capacity(n_tracks);
    let mut fractions = Vec::with_capacity(n_tracks);
    for j in 0..n_tracks {
        let mut per_edge: Vec<Vec<f64>> = Vec::new();
        for &l in &graph.neighbors[j] {
            let q: Vec<f64> = clouds
                .iter()
                .zip(&scales.alpha)
                .filter_map(|(c, a)| Some(distance(c, j, l)? / (*a)?))
                .collect();
            if !q.is_empty() {
                per_edge.push(q);
            }
        }
        let centers: Vec<f64> = per_edge.iter().map(|q| median(q).unwrap()).collect();
        let total: usize = per_edge.iter().map(Vec::len).sum();
        if total < MIN_EVALUABLE {
            labels.push(PointLabel::Undetermined);
            fractions.push(0.0);
            continue;
        }
        let tol = settings.threshold * mean(&centers).unwrap();
        let good: usize = per_edge
            .iter()
            .zip(&centers)
            .map(|(q, c)| q.iter().filter(|d| (*d - c).abs() < tol).count())
            .sum();
        let f = good as f64 / total as f64;
        fractions.push(f);
        labels.push(if f > settings.min_fraction { PointLabel::Inlier } else { PointLabel::Outlier });
    }
    Classification { labels, consistent_fraction: fractions }
}
