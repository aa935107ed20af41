//! Synthetic benchmark: a sheet bent isometrically onto cylinders and filmed by a calibrated camera.

use nalgebra::{Matrix2, Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitCircle};
use serde::{Deserialize, Serialize};

use crate::data::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{shape_from_plane, CameraIntrinsics, LocalShape, NormalizedPoint};
use crate::warp::PairDifferentials;

/// How corrupted observations are displaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    /// Independent uniform offsets per axis with the given standard deviation in pixels.
    UniformStd { std_px: f64 },
    /// Random direction with magnitude uniform in [min_px, max_px].
    MagnitudeRange { min_px: f64, max_px: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CylinderParams {
    pub images: usize,
    pub points: usize,
    pub noise_px: f64,
    pub error_fraction: f64,
    pub error_model: ErrorModel,
    /// Sheet extent along the bending direction and across it, mm.
    pub sheet_length: f64,
    pub sheet_width: f64,
    /// Bending radius range in mm; `None` keeps the sheet flat.
    pub radius_range: Option<(f64, f64)>,
    pub max_rotation_deg: f64,
    pub depth: f64,
    pub intrinsics: CameraIntrinsics,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            images: 7,
            points: 400,
            noise_px: 1.0,
            error_fraction: 0.0,
            error_model: ErrorModel::UniformStd { std_px: 100.0 },
            sheet_length: 200.0,
            sheet_width: 120.0,
            radius_range: Some((200.0, 600.0)),
            max_rotation_deg: 25.0,
            depth: 450.0,
            intrinsics: CameraIntrinsics { fx: 1500.0, fy: 1500.0, cx: 960.0, cy: 540.0, image_w: 1920, image_h: 1080 },
        }
    }
}

/// Ground truth for one generated sequence.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub params: CylinderParams,
    pub seed: u64,
    /// Flat sheet coordinates (arc length, width) per track, mm.
    pub sheet: Vec<Vector2<f64>>,
    /// Bending radius per image (infinite when flat).
    pub radii: Vec<f64>,
    /// Camera-frame points `[image][track]`, mm.
    pub points: Vec<Vec<Vector3<f64>>>,
    /// Unit normals `[image][track]` oriented away from the camera.
    pub normals: Vec<Vec<Vector3<f64>>>,
    /// Injected-error flags `[track][image]`.
    pub corrupted: Vec<Vec<bool>>,
    /// Per-image pose: camera point = rotation·(bent − centre) + translation.
    pub rotations: Vec<Rotation3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    pub centres: Vec<Vector3<f64>>,
}

impl SyntheticScene {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().flatten().filter(|&&c| c).count()
    }

    /// Sheet coordinates seen at normalized point `q` of image `i`, by casting the viewing ray.
    pub fn sheet_at(&self, i: usize, q: Vector2<f64>) -> Option<Vector2<f64>> {
        let rt = self.rotations[i].transpose();
        let o = rt * (-self.translations[i]) + self.centres[i];
        let d = rt * Vector3::new(q.x, q.y, 1.0);
        let r = self.radii[i];
        let lam = if r.is_finite() {
            // x² + (z − r)² = r² on the branch facing z < r
            let (oz, dz) = (o.z - r, d.z);
            let qa = d.x * d.x + dz * dz;
            let qb = 2.0 * (o.x * d.x + oz * dz);
            let qc = o.x * o.x + oz * oz - r * r;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
                .into_iter()
                .filter(|&l| l > 0.0 && o.z + l * d.z < r)
                .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |v| v.min(l))))?
        } else {
            if d.z.abs() < 1e-15 {
                return None;
            }
            -o.z / d.z
        };
        let p = o + d * lam;
        let a = if r.is_finite() { r * p.x.atan2(r - p.z) } else { p.x };
        Some(Vector2::new(a, p.y))
    }

    /// Camera-frame point of sheet coordinates in image `i`.
    pub fn surface_point(&self, i: usize, sheet: Vector2<f64>) -> Vector3<f64> {
        let (p, _) = bend(sheet.x, sheet.y, self.radii[i]);
        self.rotations[i] * (p - self.centres[i]) + self.translations[i]
    }

    /// Exact inter-image map: normalized point of image `from` to image `to`.
    pub fn exact_warp(&self, from: usize, to: usize, q: Vector2<f64>) -> Option<Vector2<f64>> {
        let p = self.surface_point(to, self.sheet_at(from, q)?);
        Some(Vector2::new(p.x / p.z, p.y / p.z))
    }

    /// Derivatives of `exact_warp(from, to, ·)` at `q` by fourth-order central differences.
    pub fn exact_differentials(&self, from: usize, to: usize, q: Vector2<f64>) -> Option<PairDifferentials> {
        let f = |p: Vector2<f64>| self.exact_warp(from, to, p);
        let grad = |p: Vector2<f64>, e: Vector2<f64>| -> Option<Vector2<f64>> {
            Some((f(p - e * 2.0)? - f(p + e * 2.0)? + (f(p + e)? - f(p - e)?) * 8.0) / 12.0)
        };
        let h = 1e-3;
        let (eu, ev) = (Vector2::new(h, 0.0), Vector2::new(0.0, h));
        let ju = grad(q, eu)? / h;
        let jv = grad(q, ev)? / h;
        let g = |p| grad(p, eu).map(|v| v / h);
        let huv = (g(q - ev * 2.0)? - g(q + ev * 2.0)? + (g(q + ev)? - g(q - ev)?) * 8.0) / (12.0 * h);
        let j = Matrix2::from_columns(&[ju, jv]);
        let at = NormalizedPoint::from_vector(q).ok()?;
        let target = NormalizedPoint::from_vector(f(q)?).ok()?;
        Some(PairDifferentials::new(j, huv.x, huv.y, at, target))
    }

    /// Ground-truth local shape of track `j` in image `i`.
    pub fn true_shape(&self, i: usize, j: usize) -> LocalShape {
        shape_from_plane(&self.points[i][j], &self.normals[i][j])
    }
}

/// Bends sheet coordinates onto a cylinder of radius `r` (infinite radius = flat).
pub fn bend(a: f64, b: f64, r: f64) -> (Vector3<f64>, Vector3<f64>) {
    if !r.is_finite() {
        return (Vector3::new(a, b, 0.0), Vector3::new(0.0, 0.0, 1.0));
    }
    let th = a / r;
    (Vector3::new(r * th.sin(), b, r * (1.0 - th.cos())), Vector3::new(-th.sin(), 0.0, th.cos()))
}

fn error_offset(model: &ErrorModel, rng: &mut ChaCha8Rng) -> Vector2<f64> {
    match *model {
        ErrorModel::UniformStd { std_px } => {
            let h = std_px * 3f64.sqrt();
            Vector2::new(rng.random_range(-h..=h), rng.random_range(-h..=h))
        }
        ErrorModel::MagnitudeRange { min_px, max_px } => {
            let [dx, dy]: [f64; 2] = UnitCircle.sample(rng);
            let m = if max_px > min_px { rng.random_range(min_px..=max_px) } else { min_px };
            Vector2::new(dx, dy) * m
        }
    }
}

pub fn generate_cylinder(params: &CylinderParams, seed: u64) -> Result<(SyntheticScene, CorrespondenceSet)> {
    params.intrinsics.validate()?;
    if params.images < 1 || params.points < 1 {
        return Err(Error::InvalidInput("scene needs at least one image and one point".into()));
    }
    if !(0.0..=1.0).contains(&params.error_fraction) {
        return Err(Error::InvalidInput(format!("error fraction {} outside [0, 1]", params.error_fraction)));
    }
    if !(params.noise_px >= 0.0) {
        return Err(Error::InvalidInput("noise must be non-negative".into()));
    }
    if let Some((lo, hi)) = params.radius_range {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidInput("invalid radius range".into()));
        }
    }
    let k = params.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, s) = (params.images, params.points);
    let (hl, hw) = (0.5 * params.sheet_length, 0.5 * params.sheet_width);
    let sheet: Vec<Vector2<f64>> =
        (0..s).map(|_| Vector2::new(rng.random_range(-hl..=hl), rng.random_range(-hw..=hw))).collect();

    let mut radii = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut translations = Vec::with_capacity(n);
    let mut centres = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let max_rot = params.max_rotation_deg.to_radians();
    for _ in 0..n {
        let r = match params.radius_range {
            Some((lo, hi)) => 1.0 / rng.random_range(1.0 / hi..=1.0 / lo),
            None => f64::INFINITY,
        };
        let [ax, ay]: [f64; 2] = UnitCircle.sample(&mut rng);
        let axis = Unit::new_normalize(Vector3::new(ax, ay, rng.random_range(-0.3..0.3)));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-max_rot..=max_rot));
        let t = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-15.0..15.0), params.depth + rng.random_range(-30.0..30.0));
        // centre the bent sheet on its mean so rotation happens about the object
        let centre = if r.is_finite() { Vector3::new(0.0, 0.0, r * (1.0 - (hl / r).sin() / (hl / r))) } else { Vector3::zeros() };
        let mut pi = Vec::with_capacity(s);
        let mut ni = Vec::with_capacity(s);
        for q in &sheet {
            let (p, nrm) = bend(q.x, q.y, r);
            let p = rot * (p - centre) + t;
            let mut nrm = rot * nrm;
            if nrm.dot(&p) < 0.0 {
                nrm = -nrm;
            }
            pi.push(p);
            ni.push(nrm);
        }
        radii.push(r);
        rotations.push(rot);
        translations.push(t);
        centres.push(centre);
        points.push(pi);
        normals.push(ni);
    }

    // per-track corruption of every image, remainder observations on one extra track
    let total = (params.error_fraction * (s * n) as f64 + 1e-9).floor() as usize;
    let (full, rem) = (total / n, total % n);
    let mut order: Vec<usize> = (0..s).collect();
    for i in (1..s).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut corrupted = vec![vec![false; n]; s];
    for (rank, &j) in order.iter().enumerate() {
        if rank < full {
            corrupted[j].iter_mut().for_each(|c| *c = true);
        } else if rank == full {
            corrupted[j][..rem].iter_mut().for_each(|c| *c = true);
        }
    }

    let noise = Normal::new(0.0, params.noise_px.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let (w, h) = (k.image_w as f64, k.image_h as f64);
    let mut tracks = vec![vec![None; n]; s];
    for i in 0..n {
        for j in 0..s {
            let mut px = k.project(&points[i][j]);
            if params.noise_px > 0.0 {
                px += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            if corrupted[j][i] {
                px += error_offset(&params.error_model, &mut rng);
            }
            px.x = px.x.clamp(0.0, w - 1.0);
            px.y = px.y.clamp(0.0, h - 1.0);
            tracks[j][i] = Some(px);
        }
    }
    let scene = SyntheticScene {
        params: params.clone(),
        seed,
        sheet,
        radii,
        points,
        normals,
        corrupted,
        rotations,
        translations,
        centres,
    };
    Ok((scene, CorrespondenceSet::new(n, tracks)?))
}
