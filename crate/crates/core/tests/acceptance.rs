//! Acceptance suite. Every test prints one PASS/FAIL line straight to stderr so the verdicts
//! show up even when the harness captures output.

use std::io::Write;
use std::time::Instant;

use isonrsfm_core::geometry::{embedding_jacobian, normal_from_shape};
use isonrsfm_core::integration::integrate;
use isonrsfm_core::io::RunReport;
use isonrsfm_core::normal_solver::CorrespondenceView;
use isonrsfm_core::resultant::{prune_and_classify, solve_pair_resultant, sylvester_resultant};
use isonrsfm_core::solution::SolutionSet;
use isonrsfm_core::substitution::solve_pair_substitution;
use isonrsfm_core::warp::{PairDifferentials, Warp, WarpDomain};
use isonrsfm_core::{
    assemble_cubics, evaluate, generate_cylinder, run_pipeline, BaseSolver, CubicPair, CylinderParams, Error, ErrorModel,
    EvalReport, GroundTruth, LocalShape, NormalizedPoint, PipelineConfig,
};
use nalgebra::{Matrix2, Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRACTIONS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const SEEDS: u64 = 5;

fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{name}: {detail}");
}

fn run(params: &CylinderParams, config: &PipelineConfig, seed: u64) -> EvalReport {
    let (scene, cs) = generate_cylinder(params, seed).unwrap();
    let out = run_pipeline(&cs, &params.intrinsics, config).unwrap();
    evaluate(&out.estimates, &out.labels, &GroundTruth::from_scene(&scene))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn robustness_sweep() {
    let mut worst = Vec::new();
    let mut pass = true;
    for solver in [BaseSolver::Resultant, BaseSolver::Substitution] {
        let config = PipelineConfig { solver, ..PipelineConfig::default() };
        let (mut depth, mut shape) = (0.0f64, 0.0f64);
        for f in FRACTIONS {
            let params = CylinderParams {
                error_fraction: f,
                error_model: ErrorModel::UniformStd { std_px: 100.0 },
                ..CylinderParams::default()
            };
            let r = run(&params, &config, 0);
            pass &= !r.failed && r.depth_rmse_mm < 10.0 && r.shape_rmse_deg < 15.0;
            depth = depth.max(r.depth_rmse_mm);
            shape = shape.max(r.shape_rmse_deg);
        }
        worst.push(format!("{solver:?} worst depth {depth:.2} mm, worst shape {shape:.2} deg"));
    }
    verdict("robustness_sweep", pass, &format!("{} (limits 10 mm, 15 deg)", worst.join("; ")));
}

fn rates(model: ErrorModel, f: f64) -> (f64, f64) {
    let params = CylinderParams { error_fraction: f, error_model: model, ..CylinderParams::default() };
    let reports: Vec<EvalReport> = (0..SEEDS).map(|s| run(&params, &PipelineConfig::default(), s)).collect();
    (mean(reports.iter().map(|r| r.rates.tpr)), mean(reports.iter().map(|r| r.rates.tnr)))
}

#[test]
fn outlier_detection() {
    let mut pass = true;
    let mut rows = Vec::new();
    for f in FRACTIONS {
        let (tpr, tnr) = rates(ErrorModel::MagnitudeRange { min_px: 76.0, max_px: 100.0 }, f);
        let (_, tnr_small) = rates(ErrorModel::MagnitudeRange { min_px: 26.0, max_px: 50.0 }, f);
        pass &= tpr >= 0.9 && tnr >= 0.9 && tnr_small >= 0.8;
        rows.push(format!("{:.0}%: TPR {tpr:.3} TNR {tnr:.3} TNR(26-50) {tnr_small:.3}", 100.0 * f));
    }
    verdict("outlier_detection", pass, &format!("{} (limits 0.90/0.90/0.80, mean of {SEEDS} seeds)", rows.join(", ")));
}

#[test]
fn clean_data_sanity() {
    let params = CylinderParams { error_fraction: 0.0, ..CylinderParams::default() };
    let (mut outliers, mut total) = (0usize, 0usize);
    let mut per_seed = Vec::new();
    for seed in 0..SEEDS {
        let (_, cs) = generate_cylinder(&params, seed).unwrap();
        let out = run_pipeline(&cs, &params.intrinsics, &PipelineConfig::default()).unwrap();
        let labels: Vec<bool> = out.labels.iter().flatten().filter_map(|l| *l).collect();
        let bad = labels.iter().filter(|&&inlier| !inlier).count();
        per_seed.push(format!("{:.2}%", 100.0 * bad as f64 / labels.len() as f64));
        outliers += bad;
        total += labels.len();
    }
    let share = outliers as f64 / total as f64;
    verdict(
        "clean_data_sanity",
        share <= 0.01,
        &format!("{:.2}% of observations labeled outliers over {SEEDS} seeds [{}] (limit 1%)", 100.0 * share, per_seed.join(" ")),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per track of a noiseless scene: its point in image 0 and exact differentials of every other
/// image onto image 0.
fn scene_views(seed: u64) -> Vec<(NormalizedPoint, Vec<(usize, PairDifferentials)>)> {
    let params = CylinderParams { noise_px: 0.0, ..CylinderParams::default() };
    let (scene, _) = generate_cylinder(&params, seed).unwrap();
    let proj = |p: Vector3<f64>| Vector2::new(p.x / p.z, p.y / p.z);
    (0..params.points)
        .map(|j| {
            let q = NormalizedPoint::from_vector(proj(scene.points[0][j])).unwrap();
            let others =
                (1..params.images).filter_map(|i| scene.exact_differentials(i, 0, proj(scene.points[i][j])).map(|d| (i, d))).collect();
            (q, others)
        })
        .collect()
}

#[test]
fn solver_speed() {
    let views = scene_views(3);
    let mut lines = Vec::new();
    let mut pass = true;
    for solver in [BaseSolver::Resultant, BaseSolver::Substitution] {
        let times: Vec<f64> = views
            .iter()
            .map(|(q, others)| {
                let mut cv = CorrespondenceView::new(0, *q, others);
                let t = Instant::now();
                cv.solve_pairs(solver);
                t.elapsed().as_secs_f64()
            })
            .collect();
        let m = median(times);
        pass &= m <= 0.05;
        lines.push(format!("{solver:?} median {:.3} ms per correspondence", 1e3 * m));
    }
    let pruned: Vec<_> = views
        .iter()
        .flat_map(|(q, others)| others.iter().filter_map(|(_, d)| prune_and_classify(&assemble_cubics(*q, d).ok()?).ok()))
        .collect();
    let times: Vec<f64> = pruned
        .iter()
        .map(|p| {
            let t = Instant::now();
            std::hint::black_box(sylvester_resultant(p));
            t.elapsed().as_secs_f64()
        })
        .collect();
    let m = median(times);
    pass &= m <= 0.005;
    lines.push(format!("resultant table median {:.4} ms", 1e3 * m));
    verdict("solver_speed", pass, &format!("{} (limits 50 ms, 5 ms)", lines.join(", ")));
}

/// A point on a plane seen by two rigidly related cameras, with the homography derivatives
/// written out directly. The local shape of the plane at the reference point is a common root.
struct PlanePair {
    pair: CubicPair,
    truth: (f64, f64),
}

fn plane_pair(rng: &mut ChaCha8Rng) -> Option<PlanePair> {
    let mut r = |s: f64| rng.random_range(-s..s);
    let (u, v) = (r(0.3), r(0.3));
    let (x0, y0) = (r(1.5), r(1.5));
    // nᵀP = 1 with unit depth at (u, v) and ∇ln β = (x0, y0) there
    let n = Vector3::new(x0, y0, 1.0 - x0 * u - y0 * v);
    let axis = Unit::new_normalize(Vector3::new(r(1.0), r(1.0), r(1.0)));
    let rot = Rotation3::from_axis_angle(&axis, r(0.3));
    let t = Vector3::new(r(0.3), r(0.3), r(0.2));
    let h = rot.matrix() + t * n.transpose();
    let m2 = h * Vector3::new(u, v, 1.0);
    if m2.z < 0.3 {
        return None;
    }
    let q = Vector2::new(m2.x / m2.z, m2.y / m2.z);
    let m = h.try_inverse()?;
    let mq = m * Vector3::new(q.x, q.y, 1.0);
    let w = [mq.x / mq.z, mq.y / mq.z];
    let jac = |a: usize, b: usize| (m[(a, b)] - w[a] * m[(2, b)]) / mq.z;
    let j = Matrix2::new(jac(0, 0), jac(0, 1), jac(1, 0), jac(1, 1));
    let det = j.determinant();
    if !(0.5..=2.0).contains(&det) {
        return None;
    }
    let huv = |a: usize| -(m[(2, 1)] * jac(a, 0) + m[(2, 0)] * jac(a, 1)) / mq.z;
    let p1 = NormalizedPoint::new(u, v).ok()?;
    let d = PairDifferentials::new(j, huv(0), huv(1), NormalizedPoint::from_vector(q).ok()?, p1);
    Some(PlanePair { pair: assemble_cubics(p1, &d).ok()?, truth: (x0, y0) })
}

fn plane_pairs(seed: u64, n: usize) -> Vec<PlanePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if let Some(p) = plane_pair(&mut rng) {
            out.push(p);
        }
    }
    out
}

/// Cubic with coefficients of x³, x²y, xy², y³, x², xy, y², x, y, 1 as y-polynomial coefficients at fixed x.
fn at_x(c: &[f64; 10], x: f64) -> [f64; 4] {
    [
        c[9] + x * (c[7] + x * (c[4] + x * c[0])),
        c[8] + x * (c[5] + x * c[1]),
        c[6] + x * c[2],
        c[3],
    ]
}

fn value(c: &[f64; 10], x: f64, y: f64) -> f64 {
    let p = at_x(c, x);
    p[0] + y * (p[1] + y * (p[2] + y * p[3]))
}

fn gradient(c: &[f64; 10], x: f64, y: f64) -> [f64; 2] {
    let dx = 3.0 * c[0] * x * x + 2.0 * c[1] * x * y + c[2] * y * y + 2.0 * c[4] * x + c[5] * y + c[7];
    let dy = c[1] * x * x + 2.0 * c[2] * x * y + 3.0 * c[3] * y * y + c[5] * x + 2.0 * c[6] * y + c[8];
    [dx, dy]
}

fn magnitude(c: &[f64; 10], x: f64, y: f64) -> f64 {
    let a = c.map(f64::abs);
    value(&a, x.abs(), y.abs())
}

fn relative(c: &[f64; 10], x: f64, y: f64) -> f64 {
    value(c, x, y).abs() / magnitude(c, x, y).max(f64::MIN_POSITIVE)
}

/// Damped Gauss-Newton on (A, B) from a grid point.
fn descend(a: &[f64; 10], b: &[f64; 10], mut x: f64, mut y: f64) -> (f64, f64) {
    let f = |x, y| value(a, x, y).powi(2) + value(b, x, y).powi(2);
    let mut mu = 1e-12;
    for _ in 0..100 {
        let (ra, rb) = (value(a, x, y), value(b, x, y));
        let (ga, gb) = (gradient(a, x, y), gradient(b, x, y));
        let jtj = Matrix2::new(ga[0] * ga[0] + gb[0] * gb[0], ga[0] * ga[1] + gb[0] * gb[1], 0.0, 0.0);
        let jtj = Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(0, 1)], ga[1] * ga[1] + gb[1] * gb[1]);
        let g = Vector2::new(ga[0] * ra + gb[0] * rb, ga[1] * ra + gb[1] * rb);
        let f0 = f(x, y);
        let mut improved = false;
        for _ in 0..30 {
            let Some(inv) = (jtj + Matrix2::identity() * mu * (1.0 + jtj.trace())).try_inverse() else { break };
            let step = inv * g;
            let (nx, ny) = (x - step.x, y - step.y);
            if f(nx, ny) < f0 {
                (x, y) = (nx, ny);
                mu = (mu * 0.1).max(1e-15);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, y)
}

const GRID: usize = 2001;
const BOX: f64 = 2.0;

/// Common roots in the box: local minima of A² + B² on the grid, refined by descent, kept when
/// both cubics vanish to rounding.
fn grid_roots(pair: &CubicPair, f: &mut Vec<f64>) -> Vec<(f64, f64)> {
    let step = 2.0 * BOX / (GRID - 1) as f64;
    let coord = |i: usize| -BOX + step * i as f64;
    f.clear();
    for i in 0..GRID {
        let (pa, pb) = (at_x(&pair.a, coord(i)), at_x(&pair.b, coord(i)));
        for k in 0..GRID {
            let y = coord(k);
            let va = pa[0] + y * (pa[1] + y * (pa[2] + y * pa[3]));
            let vb = pb[0] + y * (pb[1] + y * (pb[2] + y * pb[3]));
            f.push(va * va + vb * vb);
        }
    }
    let mut minima = Vec::new();
    for i in 0..GRID {
        for k in 0..GRID {
            let c = f[i * GRID + k];
            let mut lowest = true;
            'n: for di in -1i64..=1 {
                for dk in -1i64..=1 {
                    let (ni, nk) = (i as i64 + di, k as i64 + dk);
                    if (di, dk) == (0, 0) || ni < 0 || nk < 0 || ni >= GRID as i64 || nk >= GRID as i64 {
                        continue;
                    }
                    if f[ni as usize * GRID + nk as usize] < c {
                        lowest = false;
                        break 'n;
                    }
                }
            }
            if lowest {
                minima.push((c, i, k));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut roots: Vec<(f64, f64)> = Vec::new();
    for &(_, i, k) in minima.iter().take(64) {
        let (x, y) = descend(&pair.a, &pair.b, coord(i), coord(k));
        let inside = x.abs() <= BOX && y.abs() <= BOX;
        if inside && relative(&pair.a, x, y) <= 1e-9 && relative(&pair.b, x, y) <= 1e-9 {
            if !roots.iter().any(|r| (r.0 - x).abs() < 1e-7 && (r.1 - y).abs() < 1e-7) {
                roots.push((x, y));
            }
        }
    }
    roots
}

fn close(s: LocalShape, p: (f64, f64), tol: f64) -> bool {
    (s.x - p.0).abs() <= tol && (s.y - p.1).abs() <= tol
}

fn contains(set: &SolutionSet, p: (f64, f64), tol: f64) -> bool {
    set.shapes().any(|s| close(s, p, tol))
}

/// Candidates away from the box edge, where the grid oracle can see them.
fn in_box(set: &SolutionSet) -> Vec<(f64, f64)> {
    set.shapes().filter(|s| s.x.abs() < BOX - 1e-3 && s.y.abs() < BOX - 1e-3).map(|s| (s.x, s.y)).collect()
}

#[test]
fn solver_oracle_equivalence() {
    let pairs = plane_pairs(51, 1000);
    let mut grid = Vec::with_capacity(GRID * GRID);
    let (mut best_mismatch, mut set_mismatch, mut oracle_mismatch, mut truth_missing) = (0, 0, 0, 0);
    let mut ties = 0;
    let mut worst = 0.0f64;
    for p in &pairs {
        let res = solve_pair_resultant(&p.pair).unwrap();
        let sub = solve_pair_substitution(&p.pair).unwrap();
        let (br, bs) = (res.best().unwrap().shape, sub.best().unwrap().shape);
        if close(br, (bs.x, bs.y), 1e-5) {
            worst = worst.max((br.x - bs.x).abs().max((br.y - bs.y).abs()));
        } else if contains(&res, (bs.x, bs.y), 1e-5) && contains(&sub, (br.x, br.y), 1e-5) {
            // two exact roots whose residuals differ only by rounding
            ties += 1;
        } else {
            best_mismatch += 1;
        }
        let (ir, is) = (in_box(&res), in_box(&sub));
        if ir.iter().any(|&c| !contains(&sub, c, 1e-5)) || is.iter().any(|&c| !contains(&res, c, 1e-5)) {
            set_mismatch += 1;
        }
        if !contains(&res, p.truth, 1e-5) || !contains(&sub, p.truth, 1e-5) {
            truth_missing += 1;
        }
        let oracle = grid_roots(&p.pair, &mut grid);
        let inner: Vec<_> = oracle.iter().copied().filter(|o| o.0.abs() < BOX - 1e-3 && o.1.abs() < BOX - 1e-3).collect();
        let near = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() <= 1e-3 && (a.1 - b.1).abs() <= 1e-3;
        let found = |set: &SolutionSet, inside: &[(f64, f64)]| {
            inner.iter().all(|&o| contains(set, o, 1e-3)) && inside.iter().all(|&c| oracle.iter().any(|&o| near(c, o)))
        };
        if inner.is_empty() || !found(&res, &ir) || !found(&sub, &is) {
            oracle_mismatch += 1;
        }
    }
    let pass = best_mismatch == 0 && set_mismatch == 0 && oracle_mismatch == 0 && truth_missing == 0;
    verdict(
        "solver_oracle_equivalence",
        pass,
        &format!(
            "{} plane pairs: best disagreements {best_mismatch} (max gap {worst:.1e}, {ties} rounding ties), \
             candidate set disagreements {set_mismatch}, grid oracle disagreements {oracle_mismatch}, \
             true shape missing {truth_missing}",
            pairs.len()
        ),
    );
}

fn random_pair(rng: &mut ChaCha8Rng) -> CubicPair {
    let mut c = || -> [f64; 10] {
        let mut v: [f64; 10] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        // exercise the lower-degree resultant cases
        if rng.random_bool(0.2) {
            v[3] = 0.0;
            if rng.random_bool(0.5) {
                v[2] = 0.0;
                v[6] = 0.0;
            }
        }
        v
    };
    CubicPair::from_coefficients(c(), c())
}

#[test]
fn root_residuals() {
    let mut violations = 0;
    let mut worst = 0.0f64;
    let mut inexact = 0;
    let pairs = plane_pairs(61, 10_000);
    for p in &pairs {
        for set in [solve_pair_resultant(&p.pair), solve_pair_substitution(&p.pair)] {
            match set {
                Ok(set) => {
                    for c in &set.candidates {
                        let r = relative(&p.pair.a, c.shape.x, c.shape.y).max(relative(&p.pair.b, c.shape.x, c.shape.y));
                        worst = worst.max(r);
                        inexact += usize::from(!c.exact);
                        violations += usize::from(r > 1e-6);
                    }
                }
                Err(_) => violations += 1,
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let (mut empty, mut degenerate, mut fallbacks) = (0, 0, 0);
    const FUZZ: usize = 100_000;
    for _ in 0..FUZZ {
        let pair = random_pair(&mut rng);
        match solve_pair_resultant(&pair) {
            Ok(set) if set.is_empty() => empty += 1,
            Ok(set) => {
                fallbacks += usize::from(!set.candidates[0].exact);
                for c in set.candidates.iter().filter(|c| c.exact) {
                    let r = relative(&pair.a, c.shape.x, c.shape.y).max(relative(&pair.b, c.shape.x, c.shape.y));
                    violations += usize::from(r > 1e-6);
                }
            }
            Err(Error::DegeneratePair) => degenerate += 1,
            Err(_) => empty += 1,
        }
    }
    verdict(
        "root_residuals",
        violations == 0 && empty == 0 && inexact == 0,
        &format!(
            "{} exact plane pairs: {violations} residual violations, worst relative {worst:.1e}, {inexact} inexact; \
             {FUZZ} fuzz pairs: {empty} without a candidate, {degenerate} degenerate, {fallbacks} closest-real fallbacks",
            pairs.len()
        ),
    );
}

fn random_warp(rng: &mut ChaCha8Rng) -> Warp {
    let (u0, v0) = (rng.random_range(-0.5..0.0), rng.random_range(-0.5..0.0));
    let domain = WarpDomain {
        u_min: u0,
        u_max: u0 + rng.random_range(0.2..1.0),
        v_min: v0,
        v_max: v0 + rng.random_range(0.2..1.0),
    };
    let spans = rng.random_range(1..=10);
    let mut w = Warp::identity(domain, spans);
    for c in w.coefficients_mut() {
        *c += Vector2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    }
    w
}

#[test]
fn differential_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut fd_err = 0.0f64;
    for _ in 0..1000 {
        let w = random_warp(&mut rng);
        let d = w.domain();
        let h = 1e-5 * (d.u_max - d.u_min).min(d.v_max - d.v_min);
        for _ in 0..10 {
            let p = Vector2::new(
                rng.random_range(d.u_min + 2.0 * h..d.u_max - 2.0 * h),
                rng.random_range(d.v_min + 2.0 * h..d.v_max - 2.0 * h),
            );
            let jet = w.jet(p);
            for (b, e) in [Vector2::new(h, 0.0), Vector2::new(0.0, h)].into_iter().enumerate() {
                let dv = (w.eval(p + e) - w.eval(p - e)) / (2.0 * h);
                let dj = (w.jet(p + e).jacobian - w.jet(p - e).jacobian) / (2.0 * h);
                let analytic = if b == 0 { jet.hu } else { jet.hv };
                for a in 0..2 {
                    fd_err = fd_err.max((dv[a] - jet.jacobian[(a, b)]).abs() / (1.0 + jet.jacobian[(a, b)].abs()));
                }
                fd_err = fd_err.max((dj - analytic).abs().max() / (1.0 + analytic.abs().max()));
            }
            fd_err = fd_err.max((jet.value - w.eval(p)).abs().max());
        }
    }

    let mut ortho = 0.0f64;
    for _ in 0..10_000 {
        let p = NormalizedPoint::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)).unwrap();
        let s = LocalShape::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let beta = rng.random_range(0.1..10.0);
        let j = embedding_jacobian(p, beta, s).unwrap();
        let n = normal_from_shape(p, s).unwrap();
        for c in 0..2 {
            let col = j.column(c);
            ortho = ortho.max(col.dot(&n).abs() / col.norm());
        }
    }

    let mut integ = 0.0f64;
    for _ in 0..20 {
        let (a, b, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        let points: Vec<NormalizedPoint> =
            (0..400).map(|_| NormalizedPoint::new(rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3)).unwrap()).collect();
        let truth: Vec<f64> = points.iter().map(|p| (a * p.u + b * p.v + c).exp()).collect();
        let shapes = vec![LocalShape::new(a, b); points.len()];
        let surf = integrate(&points, &shapes).unwrap();
        assert_eq!(surf.n_components, 1);
        let log_scale = mean(truth.iter().zip(&surf.beta).map(|(t, e)| t.ln() - e.ln()));
        for (t, e) in truth.iter().zip(&surf.beta) {
            integ = integ.max((e * log_scale.exp() - t).abs() / t);
        }
    }

    verdict(
        "differential_geometry",
        fd_err <= 1e-5 && ortho <= 1e-10 && integ <= 0.01,
        &format!(
            "warp derivative vs finite differences {fd_err:.1e} (limit 1e-5), tangent-normal {ortho:.1e} (limit 1e-10), \
             log-linear integration {:.3}% (limit 1%)",
            100.0 * integ
        ),
    );
}

fn report_json(config: &PipelineConfig, seed: u64) -> String {
    let params = CylinderParams { error_fraction: 0.3, ..CylinderParams::default() };
    let (scene, cs) = generate_cylinder(&params, seed).unwrap();
    let out = run_pipeline(&cs, &params.intrinsics, config).unwrap();
    let metrics = evaluate(&out.estimates, &out.labels, &GroundTruth::from_scene(&scene));
    serde_json::to_string(&RunReport::new(&out, Some(metrics))).unwrap()
}

#[test]
fn determinism() {
    let config = PipelineConfig { seed: 17, ..PipelineConfig::default() };
    let a = report_json(&config, 4);
    let b = report_json(&config, 4);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| report_json(&config, 4));
    let quad = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| report_json(&config, 4));
    let other = report_json(&PipelineConfig { seed: 18, ..config.clone() }, 4);
    let pass = a == b && a == single && a == quad;
    verdict(
        "determinism",
        pass,
        &format!(
            "repeat identical {}, 1 thread identical {}, 4 threads identical {}, report {} bytes (other pipeline seed differs: {})",
            a == b,
            a == single,
            a == quad,
            a.len(),
            a != other
        ),
    );
}
