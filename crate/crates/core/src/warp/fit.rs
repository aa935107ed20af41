//! Regularized linear least-squares fitting of B-spline warps.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::bspline::{basis, locate, Warp, WarpDomain};
use crate::error::{Error, Result};

/// Minimum number of weighted correspondences for a fit.
pub const MIN_CORRESPONDENCES: usize = 16;
/// Relative padding of the source bounding box used as the warp domain.
pub const DOMAIN_PAD: f64 = 0.05;
/// Bending-energy weight tuned on 1 px noise synthetic sequences.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Weight for the robust fits that flag outliers: bias at strongly foreshortened edges
/// matters more there than derivative noise.
pub const MAD_LAMBDA: f64 = 1e-3;
const RETRIES: usize = 3;

/// Quadratic smoothness penalty on the control values.
pub trait Regularizer: Send + Sync {
    /// Adds the penalty's Gram matrix into `gram`, which spans the u-channel control values
    /// followed by the v-channel ones (2·(spans+3)² rows).
    fn accumulate(&self, domain: &WarpDomain, spans: usize, gram: &mut DMatrix<f64>);
}

/// Thin-plate bending energy ∫∫ f_ss² + 2 f_st² + f_tt² in span-unit parameters,
/// integrated with 4-point Gauss quadrature per span and axis.
#[derive(Debug, Clone, Copy, Default)]
pub struct BendingEnergy;

const GAUSS_X: [f64; 4] = [0.069_431_844_202_973_71, 0.330_009_478_207_571_9, 0.669_990_521_792_428_1, 0.930_568_155_797_026_3];
const GAUSS_W: [f64; 4] = [0.173_927_422_568_726_9, 0.326_072_577_431_273_1, 0.326_072_577_431_273_1, 0.173_927_422_568_726_9];

/// Second-derivative rows (ss, st, tt) of the 16 local basis functions at a quadrature node.
fn second_rows(a: &([f64; 4], [f64; 4], [f64; 4]), b: &([f64; 4], [f64; 4], [f64; 4])) -> [[f64; 16]; 3] {
    let mut rows = [[0.0; 16]; 3];
    for ka in 0..4 {
        for kb in 0..4 {
            let k = ka * 4 + kb;
            rows[0][k] = a.2[ka] * b.0[kb];
            rows[1][k] = a.1[ka] * b.1[kb];
            rows[2][k] = a.0[ka] * b.2[kb];
        }
    }
    rows
}

impl Regularizer for BendingEnergy {
    fn accumulate(&self, _domain: &WarpDomain, spans: usize, gram: &mut DMatrix<f64>) {
        let n = spans + 3;
        let m = n * n;
        let rules: Vec<_> = GAUSS_X.iter().map(|&t| basis(t)).collect();
        for iu in 0..spans {
            for iv in 0..spans {
                for (qa, ra) in rules.iter().enumerate() {
                    for (qb, rb) in rules.iter().enumerate() {
                        let w = GAUSS_W[qa] * GAUSS_W[qb];
                        let rows = second_rows(ra, rb);
                        for (r, wr) in rows.iter().zip([w, 2.0 * w, w]) {
                            for k in 0..16 {
                                let ik = (iu + k / 4) * n + iv + k % 4;
                                for l in 0..16 {
                                    let il = (iu + l / 4) * n + iv + l % 4;
                                    let g = wr * r[k] * r[l];
                                    gram[(ik, il)] += g;
                                    gram[(m + ik, m + il)] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Schwarzian-equation residual linearized about a previous warp.
///
/// A homography has second derivatives η_ab = J(e_a c_b + e_b c_a) for some covector c, so
/// K_ab = J⁻¹η_ab satisfies K_ss,2 = 0, K_tt,1 = 0, K_ss,1 = 2K_st,2 and K_tt,2 = 2K_st,1.
/// Freezing J at the previous warp makes these four residuals linear in the control values.
/// They are scaled by √|det J| so the penalty has the units of the bending energy, a small
/// multiple of which is added to remove the homography null space.
pub struct LinearizedSchwarzian<'a> {
    pub about: &'a Warp,
    pub bending: f64,
}

impl Regularizer for LinearizedSchwarzian<'_> {
    fn accumulate(&self, domain: &WarpDomain, spans: usize, gram: &mut DMatrix<f64>) {
        let n = spans + 3;
        let m = n * n;
        let hu = (domain.u_max - domain.u_min) / spans as f64;
        let hv = (domain.v_max - domain.v_min) / spans as f64;
        let rules: Vec<_> = GAUSS_X.iter().map(|&t| basis(t)).collect();
        for iu in 0..spans {
            for iv in 0..spans {
                for (qa, ra) in rules.iter().enumerate() {
                    for (qb, rb) in rules.iter().enumerate() {
                        let w = GAUSS_W[qa] * GAUSS_W[qb];
                        let p = Vector2::new(
                            domain.u_min + (iu as f64 + GAUSS_X[qa]) * hu,
                            domain.v_min + (iv as f64 + GAUSS_X[qb]) * hv,
                        );
                        let j = self.about.jet(p).jacobian * Matrix2::new(hu, 0.0, 0.0, hv);
                        let det = j.determinant();
                        let Some(inv) = j.try_inverse().filter(|_| det.abs() > 0.0) else { continue };
                        let mm = inv * det.abs().sqrt();
                        let [ss, st, tt] = second_rows(ra, rb);
                        // (channel-i component of M·η_ab) has coefficient M[(i,0)]·row on u, M[(i,1)]·row on v
                        let comp = |row: &[f64; 16], i: usize, scale: f64, out: &mut [f64; 32]| {
                            for k in 0..16 {
                                out[k] += scale * mm[(i, 0)] * row[k];
                                out[16 + k] += scale * mm[(i, 1)] * row[k];
                            }
                        };
                        let mut res = [[0.0; 32]; 4];
                        comp(&ss, 1, 1.0, &mut res[0]);
                        comp(&tt, 0, 1.0, &mut res[1]);
                        comp(&ss, 0, 1.0, &mut res[2]);
                        comp(&st, 1, -2.0, &mut res[2]);
                        comp(&tt, 1, 1.0, &mut res[3]);
                        comp(&st, 0, -2.0, &mut res[3]);
                        let idx = |k: usize| {
                            let l = k % 16;
                            (k / 16) * m + (iu + l / 4) * n + iv + l % 4
                        };
                        for r in &res {
                            for k in 0..32 {
                                if r[k] == 0.0 {
                                    continue;
                                }
                                for l in 0..32 {
                                    gram[(idx(k), idx(l))] += w * r[k] * r[l];
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.bending > 0.0 {
            let mut b = DMatrix::zeros(2 * m, 2 * m);
            BendingEnergy.accumulate(domain, spans, &mut b);
            *gram += b * self.bending;
        }
    }
}

/// Which second-order penalty a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoother {
    #[default]
    Bending,
    /// Bending fit followed by re-linearized Schwarzian fits.
    Schwarzian,
}

/// Re-linearizations of the Schwarzian penalty after the initial bending fit.
pub const SCHWARZIAN_PASSES: usize = 3;
/// Bending-energy fraction kept alongside the Schwarzian penalty.
pub const SCHWARZIAN_BENDING: f64 = 1e-4;

/// Control-grid resolution (spans per axis) for `s` correspondences.
pub fn grid_spans(s: usize) -> usize {
    if s <= 500 {
        // 8×8 control values
        5
    } else {
        ((s as f64).sqrt().ceil() as usize).min(16) - 3
    }
}

/// Fit options; `spans` overrides the automatic grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub spans: Option<usize>,
    pub domain: Option<WarpDomain>,
    pub smoother: Smoother,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, spans: None, domain: None, smoother: Smoother::Bending }
    }
}

/// Fits a warp with the default bending-energy regularizer.
pub fn fit_warp(src: &[Vector2<f64>], dst: &[Vector2<f64>], weights: &[f64], lambda: f64) -> Result<Warp> {
    fit_warp_with(src, dst, weights, &FitOptions { lambda, ..FitOptions::default() })
}

/// Fits with the smoother selected in `opts`.
pub fn fit_warp_with(src: &[Vector2<f64>], dst: &[Vector2<f64>], weights: &[f64], opts: &FitOptions) -> Result<Warp> {
    if opts.smoother == Smoother::Schwarzian {
        // the first linearization needs Jacobians, which a lightly smoothed fit already has
        let light = FitOptions { lambda: opts.lambda * SCHWARZIAN_BENDING, ..*opts };
        let mut warp = fit_warp_regularized(src, dst, weights, &light, &BendingEnergy)?;
        let domain = Some(warp.domain);
        for _ in 0..SCHWARZIAN_PASSES {
            let reg = LinearizedSchwarzian { about: &warp, bending: SCHWARZIAN_BENDING };
            let next = fit_warp_regularized(src, dst, weights, &FitOptions { domain, ..*opts }, &reg)?;
            warp = next;
        }
        return Ok(warp);
    }
    fit_warp_regularized(src, dst, weights, opts, &BendingEnergy)
}

/// Minimizes Σ w_j‖η(src_j) − dst_j‖² + λ·(Σw / spans²)·R(η).
pub fn fit_warp_regularized(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
    weights: &[f64],
    opts: &FitOptions,
    regularizer: &dyn Regularizer,
) -> Result<Warp> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::InvalidInput("warp fit inputs differ in length".into()));
    }
    if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
        return Err(Error::InvalidInput(format!("smoothing weight must be non-negative, got {}", opts.lambda)));
    }
    let used: Vec<usize> = (0..src.len()).filter(|&j| weights[j] > 0.0).collect();
    if used.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences { got: used.len(), need: MIN_CORRESPONDENCES });
    }
    if used.iter().any(|&j| !(src[j].iter().chain(dst[j].iter()).all(|v| v.is_finite()) && weights[j].is_finite())) {
        return Err(Error::NonFinite("warp fit correspondences"));
    }
    let domain = match opts.domain {
        Some(d) if d.is_valid() => d,
        Some(_) => return Err(Error::InvalidInput("invalid warp domain".into())),
        None => {
            let pts: Vec<_> = used.iter().map(|&j| src[j]).collect();
            WarpDomain::bounding(&pts, DOMAIN_PAD).ok_or(Error::IllPosedWarp)?
        }
    };
    let spans = opts.spans.unwrap_or_else(|| grid_spans(src.len())).max(1);
    let n = spans + 3;
    let m = n * n;

    let mut data = DMatrix::<f64>::zeros(m, m);
    let mut rhs_u = DVector::<f64>::zeros(m);
    let mut rhs_v = DVector::<f64>::zeros(m);
    let mut wsum = 0.0;
    for &j in &used {
        let w = weights[j];
        wsum += w;
        let (iu, tu) = locate(src[j].x, domain.u_min, domain.u_max, spans);
        let (iv, tv) = locate(src[j].y, domain.v_min, domain.v_max, spans);
        let (bu, _, _) = basis(tu);
        let (bv, _, _) = basis(tv);
        let mut idx = [0usize; 16];
        let mut val = [0.0; 16];
        for k in 0..16 {
            idx[k] = (iu + k / 4) * n + iv + k % 4;
            val[k] = bu[k / 4] * bv[k % 4];
        }
        for k in 0..16 {
            let wk = w * val[k];
            rhs_u[idx[k]] += wk * dst[j].x;
            rhs_v[idx[k]] += wk * dst[j].y;
            for l in 0..16 {
                data[(idx[k], idx[l])] += wk * val[l];
            }
        }
    }
    let mut reg = DMatrix::<f64>::zeros(2 * m, 2 * m);
    regularizer.accumulate(&domain, spans, &mut reg);
    let reg_scale = wsum / (spans * spans) as f64;
    let mut rhs = DVector::<f64>::zeros(2 * m);
    rhs.rows_mut(0, m).copy_from(&rhs_u);
    rhs.rows_mut(m, m).copy_from(&rhs_v);

    let mut lambda = opts.lambda;
    for attempt in 0..=RETRIES {
        let mut normal = reg.clone() * (lambda * reg_scale);
        {
            let mut a = normal.view_mut((0, 0), (m, m));
            a += &data;
        }
        {
            let mut b = normal.view_mut((m, m), (m, m));
            b += &data;
        }
        if let Some(chol) = factor(normal) {
            let c = chol.solve(&rhs);
            let coeffs: Vec<_> = (0..m).map(|k| Vector2::new(c[k], c[m + k])).collect();
            if coeffs.iter().all(|c| c.x.is_finite() && c.y.is_finite()) {
                let mut warp = Warp { domain, spans, coeffs, lambda, rms_residual: 0.0 };
                let ss: f64 = used.iter().map(|&j| weights[j] * (warp.eval(src[j]) - dst[j]).norm_squared()).sum();
                warp.rms_residual = (ss / wsum).sqrt();
                return Ok(warp);
            }
        }
        if attempt < RETRIES {
            log::debug!("warp normal system ill-conditioned at lambda {lambda:e}, retrying");
            lambda = if lambda > 0.0 { lambda * 10.0 } else { 1e-6 };
        }
    }
    Err(Error::IllPosedWarp)
}

/// Cholesky factor accepted only with a reasonable pivot ratio.
fn factor(normal: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(normal)?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    // pivot ratio squared approximates the condition number
    if lo > 0.0 && (hi / lo).powi(2) < 1e14 {
        Some(chol)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(rng: &mut ChaCha8Rng, k: usize) -> Vec<Vector2<f64>> {
        (0..k).map(|_| Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2))).collect()
    }

    #[test]
    fn grid_resolution_rule() {
        assert_eq!(grid_spans(16) + 3, 8);
        assert_eq!(grid_spans(500) + 3, 8);
        assert_eq!(grid_spans(501) + 3, 23.min(16));
        assert_eq!(grid_spans(10_000) + 3, 16);
    }

    #[test]
    fn rejects_tiny_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = points(&mut rng, 10);
        let w = vec![1.0; 10];
        assert!(matches!(fit_warp(&p, &p, &w, 1e-3), Err(Error::TooFewCorrespondences { got: 10, need: 16 })));
    }

    #[test]
    fn translation_reproduced_at_held_out_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = points(&mut rng, 200);
        let t = Vector2::new(0.1, -0.05);
        let dst: Vec<_> = src.iter().map(|p| p + t).collect();
        let w = fit_warp(&src, &dst, &vec![1.0; src.len()], 1e-3).unwrap();
        for p in points(&mut rng, 50) {
            assert!((w.eval(p) - (p + t)).amax() <= 1e-4);
        }
        let o = w.eval(Vector2::zeros());
        assert!((o - t).amax() <= 1e-4);
    }

    #[test]
    fn identity_fit_has_identity_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = points(&mut rng, 300);
        let w = fit_warp(&src, &src, &vec![1.0; src.len()], 1e-3).unwrap();
        for p in points(&mut rng, 30) {
            let p = p * 0.9;
            let j = w.jet(p);
            assert!((j.value - p).amax() < 1e-6);
            assert!((j.jacobian - nalgebra::Matrix2::identity()).amax() < 1e-6);
            assert!(j.hu.amax() < 1e-6 && j.hv.amax() < 1e-6);
        }
    }

    #[test]
    fn homography_transfer_within_half_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Matrix3::new(1.02, 0.05, 0.03, -0.04, 0.97, -0.02, 0.15, -0.1, 1.0);
        let apply = |p: &Vector2<f64>| {
            let q = h * nalgebra::Vector3::new(p.x, p.y, 1.0);
            Vector2::new(q.x / q.z, q.y / q.z)
        };
        let src = points(&mut rng, 400);
        let dst: Vec<_> = src.iter().map(apply).collect();
        let w = fit_warp(&src, &dst, &vec![1.0; src.len()], 1e-3).unwrap();
        let px = 1.0 / 1500.0;
        for p in points(&mut rng, 100) {
            let p = p * 0.95;
            assert!((w.eval(p) - apply(&p)).norm() <= 0.5 * px);
        }
    }

    #[test]
    fn schwarzian_penalty_leaves_homographies_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = Matrix3::new(1.02, 0.05, 0.03, -0.04, 0.97, -0.02, 0.6, -0.4, 1.0);
        let apply = |p: &Vector2<f64>| {
            let q = h * nalgebra::Vector3::new(p.x, p.y, 1.0);
            Vector2::new(q.x / q.z, q.y / q.z)
        };
        let src = points(&mut rng, 400);
        let dst: Vec<_> = src.iter().map(apply).collect();
        let w = vec![1.0; src.len()];
        let held: Vec<_> = points(&mut rng, 100).into_iter().map(|p| p * 0.9).collect();
        let worst = |warp: &Warp| held.iter().map(|p| (warp.eval(*p) - apply(p)).norm() * 1500.0).fold(0.0, f64::max);
        let stiff = |smoother| FitOptions { lambda: 10.0, smoother, ..FitOptions::default() };
        let schwarzian = fit_warp_with(&src, &dst, &w, &stiff(Smoother::Schwarzian)).unwrap();
        let bending = fit_warp_with(&src, &dst, &w, &stiff(Smoother::Bending)).unwrap();
        assert!(worst(&schwarzian) <= 0.5, "{}", worst(&schwarzian));
        assert!(worst(&bending) > 2.0 * worst(&schwarzian), "{} {}", worst(&bending), worst(&schwarzian));
    }
}
