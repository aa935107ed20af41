//! Fixtures shared by the benchmarks: exact pair differentials and warp inputs from the
//! synthetic cylinder.

use isonrsfm_core::warp::PairDifferentials;
use isonrsfm_core::{assemble_cubics, generate_cylinder, CubicPair, CylinderParams, NormalizedPoint, SyntheticScene};
use nalgebra::Vector2;

pub fn scene(seed: u64) -> SyntheticScene {
    generate_cylinder(&CylinderParams { noise_px: 0.0, ..CylinderParams::default() }, seed).expect("default scene").0
}

/// Per track: its point in image 0 and the exact differentials of every other image onto image 0.
pub fn correspondence_views(scene: &SyntheticScene) -> Vec<(NormalizedPoint, Vec<(usize, PairDifferentials)>)> {
    let n = scene.points.len();
    (0..scene.sheet.len())
        .filter_map(|j| {
            let p = scene.points[0][j];
            let q = NormalizedPoint::new(p.x / p.z, p.y / p.z).ok()?;
            let others = (1..n)
                .filter_map(|i| {
                    let pi = scene.points[i][j];
                    scene.exact_differentials(i, 0, Vector2::new(pi.x / pi.z, pi.y / pi.z)).map(|d| (i, d))
                })
                .collect();
            Some((q, others))
        })
        .collect()
}

pub fn cubic_pairs(scene: &SyntheticScene) -> Vec<CubicPair> {
    correspondence_views(scene)
        .iter()
        .flat_map(|(q, others)| others.iter().filter_map(|(_, d)| assemble_cubics(*q, d).ok()))
        .collect()
}

/// Noisy normalized observations of image 1 (source) and image 0 (target).
pub fn warp_inputs(seed: u64) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    let params = CylinderParams::default();
    let (_, cs) = generate_cylinder(&params, seed).expect("default scene");
    let norm = cs.normalized(&params.intrinsics).expect("in-range observations");
    norm.iter()
        .filter_map(|t| Some((t[1]?.to_vector(), t[0]?.to_vector())))
        .unzip()
}
