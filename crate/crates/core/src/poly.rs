//! Univariate polynomials stored as ascending coefficient slices `c[0] + c[1] x + ...`.

use nalgebra::{Complex, DMatrix, Schur};

pub type C64 = Complex<f64>;

/// Tolerance deciding whether a polished eigenvalue is real: |Im| ≤ tol·(1 + |Re|).
pub const REAL_TOL: f64 = 1e-8;

pub fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

pub fn eval_complex(c: &[f64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &k| acc * z + k)
}

/// Value and first derivative by Horner.
pub fn eval_with_derivative(c: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &k in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + k;
    }
    (p, dp)
}

fn eval_complex_with_derivative(c: &[f64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for &k in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + k;
    }
    (p, dp)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add_scaled(acc: &mut Vec<f64>, p: &[f64], s: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, &k) in acc.iter_mut().zip(p) {
        *a += s * k;
    }
}

/// Drops leading coefficients with |c| below `rel`·max|c|.
pub fn trim_leading(c: &[f64], rel: f64) -> &[f64] {
    let scale = c.iter().fold(0.0f64, |m, &k| m.max(k.abs()));
    let mut n = c.len();
    while n > 0 && c[n - 1].abs() <= rel * scale {
        n -= 1;
    }
    &c[..n]
}

/// Real roots of a x² + b x + c, using the cancellation-free form.
pub fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0, 0.0];
    }
    let mut r = vec![q / a, c / q];
    r.sort_by(f64::total_cmp);
    r
}

/// All complex roots via companion-matrix eigenvalues, each refined by complex Newton.
/// Leading zeros are ignored; exact zero roots are split off first.
pub fn roots(c: &[f64]) -> Vec<C64> {
    let c = trim_leading(c, 0.0);
    if c.len() < 2 {
        return Vec::new();
    }
    let zeros = c.iter().take_while(|&&k| k == 0.0).count();
    let core = &c[zeros..];
    let mut out = vec![C64::new(0.0, 0.0); zeros];
    let n = core.len() - 1;
    match n {
        0 => return out,
        1 => {
            out.push(C64::new(-core[0] / core[1], 0.0));
            return out;
        }
        _ => {}
    }
    // scale x = ρw so the monic polynomial has |constant| = 1
    let lead = core[n];
    let rho = (core[0] / lead).abs().powf(1.0 / n as f64);
    let rho = if rho.is_finite() && rho > 0.0 { rho } else { 1.0 };
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -core[i] * rho.powi(i as i32 - n as i32) / lead;
    }
    if comp.iter().any(|v| !v.is_finite()) {
        return out;
    }
    let eig = match Schur::try_new(comp, f64::EPSILON, 10_000) {
        Some(s) => s.complex_eigenvalues(),
        None => return out,
    };
    for z in eig.iter() {
        out.push(polish_complex(core, z * rho, 3));
    }
    out
}

fn polish_complex(c: &[f64], mut z: C64, steps: usize) -> C64 {
    let mut fz = eval_complex(c, z).norm();
    for _ in 0..steps {
        let (p, dp) = eval_complex_with_derivative(c, z);
        if dp.norm() == 0.0 {
            break;
        }
        let cand = z - p / dp;
        let fc = eval_complex(c, cand).norm();
        if !(fc < fz) {
            break;
        }
        z = cand;
        fz = fc;
    }
    z
}

pub fn is_real(z: C64) -> bool {
    z.im.abs() <= REAL_TOL * (1.0 + z.re.abs())
}

/// Real roots, ascending, each polished by real Newton.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = roots(c).into_iter().filter(|z| is_real(*z)).map(|z| polish_real(c, z.re, 3)).collect();
    r.sort_by(f64::total_cmp);
    r
}

pub fn polish_real(c: &[f64], mut x: f64, steps: usize) -> f64 {
    let mut fx = eval(c, x).abs();
    for _ in 0..steps {
        let (p, dp) = eval_with_derivative(c, x);
        if dp == 0.0 {
            break;
        }
        let cand = x - p / dp;
        let fc = eval(c, cand).abs();
        if !(fc < fx) {
            break;
        }
        x = cand;
        fx = fc;
    }
    x
}

/// Sum of |c_i||x|^i, the natural scale for the rounding error of `eval`.
pub fn abs_eval(c: &[f64], x: f64) -> f64 {
    let ax = x.abs();
    c.iter().rev().fold(0.0, |acc, &k| acc * ax + k.abs())
}
