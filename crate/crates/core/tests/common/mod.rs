//! Independent oracles shared by the integration tests. Nothing here calls
//! into the factorized code paths of the crate: Gram matrices are assembled
//! from first principles and inverted explicitly.
#![allow(dead_code)]

use longrun::gp::{KernelFamily, SpatialKernelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kernel(p: &SpatialKernelParams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&p.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    match p.family {
        KernelFamily::Rbf => p.outputscale * (-0.5 * r2).exp(),
        KernelFamily::Matern52 => {
            let r = r2.sqrt();
            p.outputscale * (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp()
        }
    }
}

pub fn gram(p: &SpatialKernelParams, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel(p, &a[i], &b[j]))
}

/// Posterior mean and covariance by explicit inversion of `K + diag(noise)`.
pub fn brute_posterior(
    p: &SpatialKernelParams,
    x: &[Vec<f64>],
    y: &[f64],
    noise: &[f64],
    q: &[Vec<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let mut k = gram(p, x, x);
    for i in 0..x.len() {
        k[(i, i)] += noise[i];
    }
    let kinv = k.try_inverse().expect("invertible");
    let kq = gram(p, x, q);
    let yv = DVector::from_column_slice(y);
    let mean = kq.transpose() * &kinv * yv;
    let cov = gram(p, q, q) - kq.transpose() * &kinv * &kq;
    (mean, cov)
}

pub fn brute_lml(k: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let yv = DVector::from_column_slice(y);
    let kinv = k.clone().try_inverse().expect("invertible");
    let det = k.clone().determinant();
    -0.5 * (yv.transpose() * kinv * &yv)[0] - 0.5 * det.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of the crate's samplers.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws a function sample at `x` from a zero-mean GP via an eigen square root.
pub fn gp_draw(p: &SpatialKernelParams, x: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = gram(p, x, x);
    let eig = k.symmetric_eigen();
    let z = DVector::from_fn(x.len(), |_, _| standard_normal(rng));
    let scaled = DVector::from_fn(x.len(), |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    (eig.eigenvectors * scaled).iter().cloned().collect()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
