//! Camera normalization, the perspective embedding and the local shape/normal relations.

use nalgebra::{Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Sanity bound on normalized coordinates for physical cameras.
pub const NORMALIZED_BOUND: f64 = 10.0;

/// Pinhole intrinsics: focal lengths and principal point in pixels plus the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "width")]
    pub image_w: u32,
    #[serde(rename = "height")]
    pub image_h: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, image_w, image_h };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&[self.fx, self.fy, self.cx, self.cy], "intrinsics")?;
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidIntrinsics("image size must be positive".into()));
        }
        Ok(())
    }

    /// Pixel to normalized retinal coordinates.
    pub fn normalize(&self, pixel: Vector2<f64>) -> Result<NormalizedPoint> {
        ensure_finite(pixel.as_slice(), "pixel")?;
        NormalizedPoint::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, p: NormalizedPoint) -> Vector2<f64> {
        Vector2::new(p.u * self.fx + self.cx, p.v * self.fy + self.cy)
    }

    /// Image diagonal in pixels.
    pub fn diagonal_px(&self) -> f64 {
        (self.image_w as f64).hypot(self.image_h as f64)
    }

    /// Mean focal length, used to convert pixel tolerances to normalized units.
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Projects a camera-frame point to pixels.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Normalized image point (u, v).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub u: f64,
    pub v: f64,
}

impl NormalizedPoint {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        ensure_finite(&[u, v], "normalized point")?;
        if u.abs() >= NORMALIZED_BOUND || v.abs() >= NORMALIZED_BOUND {
            return Err(Error::PointOutOfRange { u, v });
        }
        Ok(Self { u, v })
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn from_vector(p: Vector2<f64>) -> Result<Self> {
        Self::new(p.x, p.y)
    }

    pub fn ray(self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Local reconstruction unknowns: the gradient of ln β at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalShape {
    pub x: f64,
    pub y: f64,
}

impl LocalShape {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v.x, y: v.y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A surface point seen at one image location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub beta: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl SurfacePoint {
    pub fn new(p: NormalizedPoint, beta: f64, s: LocalShape) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::NonPositiveDepth(beta));
        }
        Ok(Self { beta, point: embed(p, beta), normal: normal_from_shape(p, s)? })
    }
}

/// φ(p) = (1/β)(u, v, 1).
pub fn embed(p: NormalizedPoint, beta: f64) -> Vector3<f64> {
    p.ray() / beta
}

/// Unnormalized normal (x, y, 1 − xu − yv).
pub fn raw_normal(p: NormalizedPoint, s: LocalShape) -> Vector3<f64> {
    Vector3::new(s.x, s.y, 1.0 - s.x * p.u - s.y * p.v)
}

/// Unit normal from the local shape; the sign of the raw third component is kept.
pub fn normal_from_shape(p: NormalizedPoint, s: LocalShape) -> Result<Vector3<f64>> {
    ensure_finite(&[p.u, p.v, s.x, s.y], "shape")?;
    let n = raw_normal(p, s);
    let len = n.norm();
    if !(len > f64::MIN_POSITIVE) || !len.is_finite() {
        return Err(Error::DegenerateNormal);
    }
    Ok(n / len)
}

/// Jacobian of φ with respect to (u, v), written with (x, y) = ∇ln β.
pub fn embedding_jacobian(p: NormalizedPoint, beta: f64, s: LocalShape) -> Result<Matrix3x2<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NonPositiveDepth(beta));
    }
    let (u, v, x, y) = (p.u, p.v, s.x, s.y);
    Ok(Matrix3x2::new(1.0 - u * x, -u * y, -v * x, 1.0 - v * y, -x, -y) / beta)
}

/// Inverse depth of a camera-frame point and its local shape on the plane with normal `n`.
pub fn shape_from_plane(point: &Vector3<f64>, normal: &Vector3<f64>) -> LocalShape {
    // β(p) = n·(u,v,1) / (n·P), so ∇ln β = (n_x, n_y) / n·(u,v,1)
    let ray = point / point.z;
    let d = normal.dot(&ray);
    LocalShape::new(normal.x / d, normal.y / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k1000() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let k = k1000();
        let p = k.normalize(Vector2::new(960.0, 540.0)).unwrap();
        assert_eq!((p.u, p.v), (0.0, 0.0));
    }

    #[test]
    fn unit_offset() {
        let p = k1000().normalize(Vector2::new(1960.0, 540.0)).unwrap();
        assert_eq!((p.u, p.v), (1.0, 0.0));
    }

    #[test]
    fn rejects_non_finite_and_bad_intrinsics() {
        assert!(matches!(k1000().normalize(Vector2::new(f64::NAN, 0.0)), Err(Error::NonFinite(_))));
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 10).is_err());
    }

    #[test]
    fn fronto_parallel_normal() {
        let p = NormalizedPoint::new(0.3, -0.2).unwrap();
        let n = normal_from_shape(p, LocalShape::new(0.0, 0.0)).unwrap();
        assert_eq!(n, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn normal_at_origin() {
        let p = NormalizedPoint::new(0.0, 0.0).unwrap();
        let n = normal_from_shape(p, LocalShape::new(1.0, 0.0)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(n, Vector3::new(r, 0.0, r), epsilon = 1e-15);
    }

    #[test]
    fn identity_tangent() {
        let p = NormalizedPoint::new(0.0, 0.0).unwrap();
        let j = embedding_jacobian(p, 1.0, LocalShape::default()).unwrap();
        assert_eq!(j, Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0));
        assert!(matches!(embedding_jacobian(p, 0.0, LocalShape::default()), Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // β(u,v) = exp(0.3 + 0.7u − 0.4v + 0.5uv + 0.2u²)
        let lnb = |u: f64, v: f64| 0.3 + 0.7 * u - 0.4 * v + 0.5 * u * v + 0.2 * u * u;
        let grad = |u: f64, v: f64| (0.7 + 0.5 * v + 0.4 * u, -0.4 + 0.5 * u);
        let phi = |u: f64, v: f64| Vector3::new(u, v, 1.0) / lnb(u, v).exp();
        for &(u, v) in &[(0.1, -0.2), (0.4, 0.3), (-0.35, 0.05)] {
            let (x, y) = grad(u, v);
            let p = NormalizedPoint::new(u, v).unwrap();
            let j = embedding_jacobian(p, lnb(u, v).exp(), LocalShape::new(x, y)).unwrap();
            let h = 1e-6;
            let du = (phi(u + h, v) - phi(u - h, v)) / (2.0 * h);
            let dv = (phi(u, v + h) - phi(u, v - h)) / (2.0 * h);
            assert!((j.column(0) - du).amax() < 1e-6);
            assert!((j.column(1) - dv).amax() < 1e-6);
        }
    }

    #[test]
    fn plane_shape_gives_plane_normal() {
        let n = Vector3::new(0.2, -0.3, -1.0).normalize();
        let p = Vector3::new(0.1, 0.05, 2.0);
        let s = shape_from_plane(&p, &n);
        let q = NormalizedPoint::new(p.x / p.z, p.y / p.z).unwrap();
        let m = normal_from_shape(q, s).unwrap();
        assert_relative_eq!(m.cross(&n).norm(), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(px in -5000.0f64..7000.0, py in -5000.0f64..6000.0) {
            let k = CameraIntrinsics::new(1234.5, 987.6, 955.0, 531.0, 1920, 1080).unwrap();
            let q = k.denormalize(k.normalize(Vector2::new(px, py)).unwrap());
            prop_assert!((q.x - px).abs() <= 1e-12 * px.abs().max(1.0));
            prop_assert!((q.y - py).abs() <= 1e-12 * py.abs().max(1.0));
        }

        #[test]
        fn tangents_orthogonal_to_normal(u in -2.0f64..2.0, v in -2.0f64..2.0,
                                         x in -3.0f64..3.0, y in -3.0f64..3.0, b in 0.01f64..10.0) {
            let p = NormalizedPoint::new(u, v).unwrap();
            let s = LocalShape::new(x, y);
            let j = embedding_jacobian(p, b, s).unwrap();
            let n = raw_normal(p, s);
            prop_assert!(j.column(0).dot(&n).abs() <= 1e-10);
            prop_assert!(j.column(1).dot(&n).abs() <= 1e-10);
        }

        #[test]
        fn normal_is_unit_and_depth_free(u in -2.0f64..2.0, v in -2.0f64..2.0,
                                         x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let p = NormalizedPoint::new(u, v).unwrap();
            let s = LocalShape::new(x, y);
            let n = normal_from_shape(p, s).unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
            prop_assert_eq!(n.z.signum(), raw_normal(p, s).z.signum());
            let a = SurfacePoint::new(p, 0.5, s).unwrap();
            let c = SurfacePoint::new(p, 7.0, s).unwrap();
            prop_assert_eq!(a.normal, c.normal);
        }
    }
}
