//! Integration of a scattered (x, y) = ∇ln β field into an up-to-scale point cloud.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{LocalShape, NormalizedPoint};

pub const INTEGRATION_NEIGHBORS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct UpToScaleSurface {
    pub beta: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
    /// Connected component of every sample; each component has its own scale.
    pub component: Vec<usize>,
    pub n_components: usize,
    /// RMS of the edge constraint residuals.
    pub residual: f64,
}

/// Indices of the `k` nearest samples of each sample, ties to the lower index.
pub fn knn(points: &[NormalizedPoint], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| ((p.u - q.u).powi(2) + (p.v - q.v).powi(2), j))
                .collect();
            let k = k.min(d.len());
            if k > 0 && k < d.len() {
                d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            }
            d.truncate(k);
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn components(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        out[i] = label[r];
    }
    (out, count)
}

/// Least squares on ln β over the symmetric k-NN graph with trapezoidal edge gradients,
/// gauge mean(ln β) = 0 per component.
pub fn integrate(points: &[NormalizedPoint], shapes: &[LocalShape]) -> Result<UpToScaleSurface> {
    let n = points.len();
    if n != shapes.len() {
        return Err(Error::Integration(format!("{n} points but {} shapes", shapes.len())));
    }
    if n < 3 {
        return Err(Error::Integration(format!("{n} samples, need 3")));
    }
    let mut edges: Vec<(usize, usize)> = knn(points, INTEGRATION_NEIGHBORS)
        .into_iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.into_iter().map(move |j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let rhs = |&(i, j): &(usize, usize)| {
        let (gi, gj) = (shapes[i], shapes[j]);
        0.5 * ((gi.x + gj.x) * (points[j].u - points[i].u) + (gi.y + gj.y) * (points[j].v - points[i].v))
    };
    let (component, n_components) = components(n, &edges);
    let mut log_beta = vec![0.0; n];
    for c in 0..n_components {
        let members: Vec<usize> = (0..n).filter(|&i| component[i] == c).collect();
        let m = members.len();
        if m == 1 {
            continue;
        }
        let mut local = vec![usize::MAX; n];
        for (li, &i) in members.iter().enumerate() {
            local[i] = li;
        }
        // Laplacian normal equations plus the gauge row 1ᵀL = 0
        let mut g = DMatrix::from_element(m, m, 1.0);
        let mut b = DVector::zeros(m);
        for e in edges.iter().filter(|e| component[e.0] == c) {
            let (i, j) = (local[e.0], local[e.1]);
            let r = rhs(e);
            g[(i, i)] += 1.0;
            g[(j, j)] += 1.0;
            g[(i, j)] -= 1.0;
            g[(j, i)] -= 1.0;
            b[j] += r;
            b[i] -= r;
        }
        let chol = g.cholesky().ok_or_else(|| Error::Integration("singular normal equations".into()))?;
        let sol = chol.solve(&b);
        for (li, &i) in members.iter().enumerate() {
            log_beta[i] = sol[li];
        }
    }
    let sq: f64 = edges.iter().map(|e| (log_beta[e.1] - log_beta[e.0] - rhs(e)).powi(2)).sum();
    let residual = (sq / edges.len().max(1) as f64).sqrt();
    let beta: Vec<f64> = log_beta.iter().map(|l| l.exp()).collect();
    let pts = points.iter().zip(&beta).map(|(p, b)| p.ray() / *b).collect();
    Ok(UpToScaleSurface { beta, points: pts, component, n_components, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cylinder, CylinderParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scatter(n: usize, seed: u64) -> Vec<NormalizedPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| NormalizedPoint::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)).unwrap()).collect()
    }

    #[test]
    fn zero_field_is_fronto_parallel_unit_depth() {
        let pts = scatter(50, 1);
        let s = integrate(&pts, &vec![LocalShape::default(); 50]).unwrap();
        assert!(s.beta.iter().all(|b| (b - 1.0).abs() < 1e-12));
        assert!(s.points.iter().all(|p| (p.z - 1.0).abs() < 1e-12));
        assert_eq!(s.n_components, 1);
    }

    #[test]
    fn log_linear_field_recovered() {
        let (a, b) = (1.3, -0.7);
        let pts = scatter(400, 2);
        let shapes = vec![LocalShape::new(a, b); 400];
        let s = integrate(&pts, &shapes).unwrap();
        let truth: Vec<f64> = pts.iter().map(|p| (a * p.u + b * p.v).exp()).collect();
        let scale = truth[0] / s.beta[0];
        for (t, e) in truth.iter().zip(&s.beta) {
            assert!((t - e * scale).abs() / t < 0.01);
        }
    }

    #[test]
    fn quadratic_log_field_is_path_independent() {
        // the trapezoid rule is exact for quadratic ln β
        let pts = scatter(300, 3);
        let shapes: Vec<_> = pts.iter().map(|p| LocalShape::new(0.4 + 2.0 * p.u + p.v, -0.2 + p.u - 3.0 * p.v)).collect();
        let s = integrate(&pts, &shapes).unwrap();
        assert!(s.residual < 1e-10, "{}", s.residual);
        let f = |p: &NormalizedPoint| 0.4 * p.u + p.u * p.u + p.u * p.v - 0.2 * p.v - 1.5 * p.v * p.v;
        let off = s.beta[0].ln() - f(&pts[0]);
        for (p, b) in pts.iter().zip(&s.beta) {
            assert!((b.ln() - f(p) - off).abs() < 1e-9);
        }
    }

    #[test]
    fn cylinder_cloud_matches_after_scale() {
        let p = CylinderParams { noise_px: 0.0, ..Default::default() };
        let (scene, _) = generate_cylinder(&p, 8).unwrap();
        let truth = &scene.points[0];
        let pts: Vec<_> = truth.iter().map(|q| NormalizedPoint::new(q.x / q.z, q.y / q.z).unwrap()).collect();
        let shapes: Vec<_> = (0..truth.len()).map(|j| scene.true_shape(0, j)).collect();
        let s = integrate(&pts, &shapes).unwrap();
        // least-squares scale
        let num: f64 = s.points.iter().zip(truth).map(|(a, b)| a.dot(b)).sum();
        let den: f64 = s.points.iter().map(|a| a.norm_squared()).sum();
        let k = num / den;
        let rmse = (s.points.iter().zip(truth).map(|(a, b)| (a * k - b).norm_squared()).sum::<f64>() / truth.len() as f64).sqrt();
        assert!(rmse < 0.01 * p.sheet_length, "{rmse}");
    }

    #[test]
    fn separated_clusters_become_components() {
        let mut pts = scatter(20, 4);
        pts.extend(scatter(20, 5).into_iter().map(|p| NormalizedPoint::new(p.u + 3.0, p.v).unwrap()));
        let s = integrate(&pts, &vec![LocalShape::new(0.1, 0.2); 40]).unwrap();
        assert_eq!(s.n_components, 2);
        assert!(s.component[..20].iter().all(|&c| c == 0) && s.component[20..].iter().all(|&c| c == 1));
    }

    #[test]
    fn knn_matches_sorted_distances() {
        let pts = scatter(60, 6);
        let nb = knn(&pts, 6);
        for (i, row) in nb.iter().enumerate() {
            assert_eq!(row.len(), 6);
            assert!(!row.contains(&i));
            let far = row.iter().map(|&j| (pts[i].u - pts[j].u).hypot(pts[i].v - pts[j].v)).fold(0.0, f64::max);
            let closer = (0..60).filter(|&j| j != i && (pts[i].u - pts[j].u).hypot(pts[i].v - pts[j].v) < far).count();
            assert!(closer <= 5);
        }
    }

    proptest! {
        #[test]
        fn scaling_shapes_field_keeps_sample_count(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let pts = scatter(30, seed);
            let s = integrate(&pts, &vec![LocalShape::new(a, b); 30]).unwrap();
            prop_assert_eq!(s.points.len(), 30);
            prop_assert!(s.beta.iter().all(|b| *b > 0.0));
            let mean: f64 = s.beta.iter().map(|b| b.ln()).sum::<f64>() / 30.0;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}
