//! Uniform tensor-product cubic B-spline warps.

use nalgebra::{Matrix2, Vector2};

/// Rectangle in normalized coordinates over which the control grid is laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpDomain {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl WarpDomain {
    /// Bounding box of `points`, padded by `pad` of its extent on every side.
    pub fn bounding(points: &[Vector2<f64>], pad: f64) -> Option<Self> {
        let mut d = WarpDomain {
            u_min: f64::INFINITY,
            u_max: f64::NEG_INFINITY,
            v_min: f64::INFINITY,
            v_max: f64::NEG_INFINITY,
        };
        for p in points {
            d.u_min = d.u_min.min(p.x);
            d.u_max = d.u_max.max(p.x);
            d.v_min = d.v_min.min(p.y);
            d.v_max = d.v_max.max(p.y);
        }
        let (wu, wv) = (d.u_max - d.u_min, d.v_max - d.v_min);
        if !(wu > 0.0 && wv > 0.0) || !wu.is_finite() || !wv.is_finite() {
            return None;
        }
        d.u_min -= pad * wu;
        d.u_max += pad * wu;
        d.v_min -= pad * wv;
        d.v_max += pad * wv;
        Some(d)
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= self.u_min && p.x <= self.u_max && p.y >= self.v_min && p.y <= self.v_max
    }

    pub fn is_valid(&self) -> bool {
        [self.u_min, self.u_max, self.v_min, self.v_max].iter().all(|v| v.is_finite())
            && self.u_max > self.u_min
            && self.v_max > self.v_min
    }
}

/// Uniform cubic B-spline basis on one span, t ∈ [0, 1]: values, first and second derivatives.
#[inline]
pub(crate) fn basis(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    let b = [s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0];
    let d = [-0.5 * s * s, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2];
    let dd = [s, 3.0 * t - 2.0, 1.0 - 3.0 * t, t];
    (b, d, dd)
}

/// Span index and local parameter along one axis; outside points use the end spans.
#[inline]
pub(crate) fn locate(x: f64, lo: f64, hi: f64, spans: usize) -> (usize, f64) {
    let s = (x - lo) / (hi - lo) * spans as f64;
    let i = (s.floor().max(0.0) as usize).min(spans - 1);
    (i, s - i as f64)
}

/// Value, Jacobian and the two derivative-of-Jacobian matrices of a warp at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpJet {
    pub value: Vector2<f64>,
    /// (∂η/∂u, ∂η/∂v) as columns.
    pub jacobian: Matrix2<f64>,
    /// ∂J/∂u.
    pub hu: Matrix2<f64>,
    /// ∂J/∂v.
    pub hv: Matrix2<f64>,
}

/// Tensor-product cubic B-spline map R² → R² on a uniform (spans+3)² control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Warp {
    pub(crate) domain: WarpDomain,
    pub(crate) spans: usize,
    /// Control values, index `a * (spans + 3) + b` with `a` along u.
    pub(crate) coeffs: Vec<Vector2<f64>>,
    pub(crate) lambda: f64,
    pub(crate) rms_residual: f64,
}

impl Warp {
    /// Builds a warp directly from control values.
    pub fn from_coefficients(domain: WarpDomain, spans: usize, coeffs: Vec<Vector2<f64>>) -> Option<Self> {
        if spans == 0 || !domain.is_valid() || coeffs.len() != (spans + 3) * (spans + 3) {
            return None;
        }
        if coeffs.iter().any(|c| !c.x.is_finite() || !c.y.is_finite()) {
            return None;
        }
        Some(Self { domain, spans, coeffs, lambda: 0.0, rms_residual: 0.0 })
    }

    /// Control values reproducing the identity map exactly (linear precision).
    pub fn identity(domain: WarpDomain, spans: usize) -> Self {
        let n = spans + 3;
        let hu = (domain.u_max - domain.u_min) / spans as f64;
        let hv = (domain.v_max - domain.v_min) / spans as f64;
        let mut coeffs = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                // Greville abscissae of the uniform cubic basis sit at the knot one span in
                coeffs.push(Vector2::new(domain.u_min + (a as f64 - 1.0) * hu, domain.v_min + (b as f64 - 1.0) * hv));
            }
        }
        Self { domain, spans, coeffs, lambda: 0.0, rms_residual: 0.0 }
    }

    pub fn domain(&self) -> WarpDomain {
        self.domain
    }

    pub fn spans(&self) -> usize {
        self.spans
    }

    pub fn coefficients(&self) -> &[Vector2<f64>] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [Vector2<f64>] {
        &mut self.coeffs
    }

    /// Smoothing weight in effect after any ill-conditioning retries.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Root-mean-square fit residual (normalized units) over weighted fit points.
    pub fn rms_residual(&self) -> f64 {
        self.rms_residual
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        self.domain.contains(p)
    }

    pub fn eval(&self, p: Vector2<f64>) -> Vector2<f64> {
        let d = &self.domain;
        let (iu, tu) = locate(p.x, d.u_min, d.u_max, self.spans);
        let (iv, tv) = locate(p.y, d.v_min, d.v_max, self.spans);
        let (bu, _, _) = basis(tu);
        let (bv, _, _) = basis(tv);
        let n = self.spans + 3;
        let mut out = Vector2::zeros();
        for (ka, wa) in bu.iter().enumerate() {
            let row = (iu + ka) * n + iv;
            let mut acc = Vector2::zeros();
            for (kb, wb) in bv.iter().enumerate() {
                acc += self.coeffs[row + kb] * *wb;
            }
            out += acc * *wa;
        }
        out
    }

    /// Analytic value and derivatives up to second order.
    pub fn jet(&self, p: Vector2<f64>) -> WarpJet {
        let d = &self.domain;
        let su = self.spans as f64 / (d.u_max - d.u_min);
        let sv = self.spans as f64 / (d.v_max - d.v_min);
        let (iu, tu) = locate(p.x, d.u_min, d.u_max, self.spans);
        let (iv, tv) = locate(p.y, d.v_min, d.v_max, self.spans);
        let (bu, du, ddu) = basis(tu);
        let (bv, dv, ddv) = basis(tv);
        let n = self.spans + 3;
        let mut f = Vector2::zeros();
        let mut fu = Vector2::zeros();
        let mut fv = Vector2::zeros();
        let mut fuu = Vector2::zeros();
        let mut fuv = Vector2::zeros();
        let mut fvv = Vector2::zeros();
        for ka in 0..4 {
            let row = (iu + ka) * n + iv;
            for kb in 0..4 {
                let c = self.coeffs[row + kb];
                f += c * (bu[ka] * bv[kb]);
                fu += c * (du[ka] * bv[kb]);
                fv += c * (bu[ka] * dv[kb]);
                fuu += c * (ddu[ka] * bv[kb]);
                fuv += c * (du[ka] * dv[kb]);
                fvv += c * (bu[ka] * ddv[kb]);
            }
        }
        fu *= su;
        fv *= sv;
        fuu *= su * su;
        fuv *= su * sv;
        fvv *= sv * sv;
        WarpJet {
            value: f,
            jacobian: Matrix2::from_columns(&[fu, fv]),
            hu: Matrix2::from_columns(&[fuu, fuv]),
            hv: Matrix2::from_columns(&[fuv, fvv]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dom() -> WarpDomain {
        WarpDomain { u_min: -0.4, u_max: 0.3, v_min: -0.2, v_max: 0.25 }
    }

    #[test]
    fn basis_partition_of_unity() {
        for k in 0..=10 {
            let (b, d, dd) = basis(k as f64 / 10.0);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(d.iter().sum::<f64>().abs() < 1e-15);
            assert!(dd.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn identity_grid_is_exact() {
        let w = Warp::identity(dom(), 8);
        for &(u, v) in &[(-0.39, -0.19), (0.0, 0.0), (0.29, 0.24), (0.123, -0.077)] {
            let p = Vector2::new(u, v);
            let j = w.jet(p);
            assert!((j.value - p).amax() < 1e-14);
            assert!((j.jacobian - Matrix2::identity()).amax() < 1e-12);
            assert!(j.hu.amax() < 1e-10 && j.hv.amax() < 1e-10);
        }
    }

    #[test]
    fn shifting_all_controls_translates() {
        let mut w = Warp::identity(dom(), 5);
        for c in w.coefficients_mut() {
            c.x += 0.07;
        }
        let p = Vector2::new(0.1, 0.1);
        assert!((w.eval(p) - Vector2::new(0.17, 0.1)).amax() < 1e-14);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = Warp::identity(dom(), 6);
        for c in w.coefficients_mut() {
            c.x += rng.random_range(-0.02..0.02);
            c.y += rng.random_range(-0.02..0.02);
        }
        let h = 1e-5;
        for _ in 0..50 {
            let p = Vector2::new(rng.random_range(-0.38..0.28), rng.random_range(-0.18..0.23));
            let j = w.jet(p);
            let eu = Vector2::new(h, 0.0);
            let ev = Vector2::new(0.0, h);
            let ju = (w.jet(p + eu).jacobian - w.jet(p - eu).jacobian) / (2.0 * h);
            let jv = (w.jet(p + ev).jacobian - w.jet(p - ev).jacobian) / (2.0 * h);
            let fu = (w.eval(p + eu) - w.eval(p - eu)) / (2.0 * h);
            let fv = (w.eval(p + ev) - w.eval(p - ev)) / (2.0 * h);
            assert!((j.jacobian.column(0) - fu).amax() < 1e-7);
            assert!((j.jacobian.column(1) - fv).amax() < 1e-7);
            assert!((j.hu - ju).amax() < 1e-5);
            assert!((j.hv - jv).amax() < 1e-5);
            // mixed partials agree
            assert!((j.hu.column(1) - j.hv.column(0)).amax() < 1e-12);
        }
    }
}
