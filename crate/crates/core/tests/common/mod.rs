//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gauss rule from a symmetric tridiagonal Jacobi matrix (Golub–Welsch).
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// n-point Gauss–Legendre on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..n).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
    golub_welsch(&vec![0.0; n], &off, 2.0)
}

/// n-point Gauss–Laguerre for ∫₀^∞ e^{-t} f(t) dt.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64).collect();
    let off: Vec<f64> = (1..n).map(|i| i as f64).collect();
    golub_welsch(&diag, &off, 1.0)
}

/// E[g(u) h(v)] for (u, v) centered Gaussian with covariance
/// [[q11, q12], [q12, q22]], by a product rule in polar coordinates:
/// Gauss–Laguerre in r²/2 and Gauss–Legendre in angle, the angle split
/// wherever u or v changes sign so that each piece is smooth.
pub fn gaussian_pair_expectation(q11: f64, q22: f64, q12: f64, g: impl Fn(f64) -> f64, h: impl Fn(f64) -> f64, n: usize) -> f64 {
    let s1 = q11.sqrt();
    let s2 = q22.sqrt();
    let rho = if s1 * s2 > 0.0 { (q12 / (s1 * s2)).clamp(-1.0, 1.0) } else { 0.0 };
    let a = (s1, 0.0);
    let b = (s2 * rho, s2 * (1.0 - rho * rho).max(0.0).sqrt());
    let mut cuts = Vec::new();
    for v in [a, b] {
        if v.0 != 0.0 || v.1 != 0.0 {
            let base = v.1.atan2(v.0);
            for s in [-0.5, 0.5] {
                cuts.push((base + s * PI).rem_euclid(2.0 * PI));
            }
        }
    }
    cuts.push(0.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let mut arcs = Vec::new();
    for i in 0..cuts.len() {
        let lo = cuts[i];
        let hi = if i + 1 < cuts.len() { cuts[i + 1] } else { 2.0 * PI };
        if hi - lo > 1e-15 {
            arcs.push((lo, hi));
        }
    }
    let (gx, gw) = gauss_legendre(n);
    let (lx, lw) = gauss_laguerre(n);
    let mut total = 0.0;
    for (lo, hi) in arcs {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (xa, wa) in gx.iter().zip(&gw) {
            let phi = mid + half * xa;
            let (c, s) = (phi.cos(), phi.sin());
            let pu = a.0 * c + a.1 * s;
            let pv = b.0 * c + b.1 * s;
            let mut radial = 0.0;
            for (t, wt) in lx.iter().zip(&lw) {
                let r = (2.0 * t).sqrt();
                radial += wt * g(r * pu) * h(r * pv);
            }
            total += wa * half * radial;
        }
    }
    total / (2.0 * PI)
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// The fully-connected NTK recursion driven by quadrature expectations.
pub fn fc_ntk_by_quadrature(x: &[f64], y: &[f64], depth: usize) -> (f64, f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let (mut qxx, mut qyy, mut qxy) = (dot(x, x), dot(y, y), dot(x, y));
    let mut theta = qxy;
    for _ in 1..depth {
        let e = |a: f64, b: f64, c: f64, f: fn(f64) -> f64| gaussian_pair_expectation(a, b, c, f, f, 64);
        let dxy = e(qxx, qyy, qxy, step);
        let nxy = e(qxx, qyy, qxy, relu);
        let nxx = e(qxx, qxx, qxx, relu);
        let nyy = e(qyy, qyy, qyy, relu);
        theta = nxy + theta * dxy;
        qxy = nxy;
        qxx = nxx;
        qyy = nyy;
    }
    (theta, qxy)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

pub fn unit_points(m: usize, n0: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..m)
        .map(|_| {
            let v = gaussian_vec(n0, &mut r);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect()
        })
        .collect()
}

/// Random symmetric positive-definite matrix B Bᵀ + shift·I.
pub fn random_spd(m: usize, shift: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let b = DMatrix::from_fn(m, m, |_, _| r.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(m, m) * shift
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
