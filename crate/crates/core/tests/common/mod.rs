#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use skpd::simgen::SimConfig;
use skpd::SkpdModel;

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random positive definite Gram matrix `A^T A / m + ridge I`.
pub fn random_gram(rng: &mut ChaCha8Rng, dim: usize, ridge: f64) -> DMatrix<f64> {
    let m = 2 * dim;
    let a = normal_matrix(rng, m, dim);
    let mut g = a.transpose() * &a / m as f64;
    for i in 0..dim {
        g[(i, i)] += ridge;
    }
    (&g + g.transpose()) * 0.5
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Accelerated proximal gradient on `1/2 v^T G v - b^T v + lambda |v|_1`,
/// with monotone restarts. Independent of the coordinate-descent solver.
pub fn proximal_gradient(g: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let lip = SymmetricEigen::new(g.clone()).eigenvalues.max();
    let step = 1.0 / lip;
    let obj = |v: &DVector<f64>| 0.5 * v.dot(&(g * v)) - b.dot(v) + lambda * v.lp_norm(1);
    let mut x = DVector::zeros(b.len());
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut prev = obj(&x);
    for _ in 0..200_000 {
        let grad = g * &y - b;
        let z = &y - grad * step;
        let x_new = z.map(|v| soft(v, lambda * step));
        let f = obj(&x_new);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f > prev {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        let moved = (&x_new - &x).amax();
        x = x_new;
        t = t_new;
        prev = f;
        if moved < 1e-14 {
            break;
        }
    }
    x
}

/// Plain least squares Lasso `1/2 |y - A v|^2 + lambda |v|_1` by ISTA.
pub fn least_squares_lasso(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let g = a.transpose() * a;
    let b = a.transpose() * y;
    proximal_gradient(&g, &b, lambda)
}

/// Symmetric square root and inverse square root through an eigendecomposition.
pub fn sqrt_pair(g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(g.clone());
    let q = &e.eigenvectors;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    let si = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
    (q * s * q.transpose(), q * si * q.transpose())
}

pub fn small_config(seed: u64) -> SimConfig {
    SimConfig {
        n: 200,
        image_dims: vec![16, 16],
        q: 15,
        theta_sparsity: 3,
        seed,
        ..SimConfig::default()
    }
}

pub fn model_bytes(m: &SkpdModel) -> Vec<u8> {
    let mut out = Vec::new();
    for v in m
        .theta
        .iter()
        .chain(m.alphas.iter().flatten())
        .chain(m.betas.iter().flatten())
    {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    for v in &m.objective_trace {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}
