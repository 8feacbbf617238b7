//! Ridge-regularized covariances, quadratic forms, symmetric inverse
//! square roots and Cholesky-based Gaussian sampling.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SkpdError};

/// Ridge used wherever a sample covariance must be made invertible.
pub const DEFAULT_TAU: f64 = 0.01;

/// Symmetric PSD matrix together with the ridge already added to it.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCovariance {
    matrix: DMatrix<f64>,
    tau: f64,
}

impl RidgeCovariance {
    /// Wraps `raw + tau I`; `raw` is symmetrized exactly.
    pub fn from_raw(mut raw: DMatrix<f64>, tau: f64) -> Result<Self> {
        if !raw.is_square() {
            return Err(SkpdError::dim(format!(
                "covariance must be square, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if !(tau >= 0.0) {
            return Err(SkpdError::InvalidInput(format!("ridge must be >= 0, got {tau}")));
        }
        symmetrize(&mut raw);
        for i in 0..raw.nrows() {
            raw[(i, i)] += tau;
        }
        Ok(Self { matrix: raw, tau })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `(1/n) X^T X + tau I` for an `n x q` matrix of (already centered) rows.
pub fn sample_covariance(rows: &DMatrix<f64>, tau: f64) -> Result<RidgeCovariance> {
    let n = rows.nrows();
    if n == 0 || rows.ncols() == 0 {
        return Err(SkpdError::dim("sample covariance of an empty matrix"));
    }
    let raw = rows.transpose() * rows / n as f64;
    RidgeCovariance::from_raw(raw, tau)
}

/// `v^T S v`, clamped at zero.
pub fn quad_form(sigma: &RidgeCovariance, v: &DVector<f64>) -> Result<f64> {
    if sigma.dim() != v.len() {
        return Err(SkpdError::dim(format!(
            "quadratic form of a {}-dim covariance with a {}-vector",
            sigma.dim(),
            v.len()
        )));
    }
    Ok(v.dot(&(sigma.matrix() * v)).max(0.0))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric `S` with `S m S = I` for symmetric positive definite `m`.
pub fn inv_sqrt_sym(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SkpdError::dim("inverse square root of a non-square matrix"));
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) {
        return Err(SkpdError::Numerical(format!(
            "matrix is not positive definite (smallest eigenvalue {lmin:e})"
        )));
    }
    let scaled = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let v = &eig.eigenvectors;
    let mut s = v * DMatrix::from_diagonal(&scaled) * v.transpose();
    symmetrize(&mut s);
    Ok(s)
}

/// Lower Cholesky factor of a symmetric PSD matrix. Retries with a jitter
/// ladder of `{1e-10, 1e-9, 1e-8} * trace / dim` before giving up.
pub fn psd_cholesky_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(SkpdError::dim("covariance must be square"));
    }
    let dim = cov.nrows();
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(dim, dim));
    }
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    let base = cov.trace().abs() / dim as f64;
    for scale in [1e-10, 1e-9, 1e-8] {
        let mut jittered = cov.clone();
        for i in 0..dim {
            jittered[(i, i)] += scale * base;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c.l());
        }
    }
    Err(SkpdError::Generation(format!(
        "covariance is not positive semidefinite (most negative eigenvalue {:e})",
        min_eigenvalue(cov)
    )))
}

/// Draws `n` rows from `N(mean, cov)`.
pub fn cholesky_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if cov.nrows() != mean.len() {
        return Err(SkpdError::dim(format!(
            "mean has {} entries, covariance is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let l = psd_cholesky_factor(cov)?;
    Ok(sample_with_factor(mean, &l, n, rng))
}

pub(crate) fn sample_with_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let dim = mean.len();
    // column i of the noise holds draw i
    let noise = DMatrix::from_iterator(dim, n, (0..dim * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mut out = (l * noise).transpose();
    for mut row in out.row_iter_mut() {
        row += mean.transpose();
    }
    out
}

/// Solves `G x = b` for symmetric positive definite `G`.
pub fn cholesky_solve(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(g.clone()).ok_or_else(|| {
        SkpdError::Numerical(format!(
            "Cholesky factorization failed (smallest eigenvalue {:e})",
            min_eigenvalue(g)
        ))
    })?;
    Ok(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn covariance_of_single_row() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = sample_covariance(&x, 0.0).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(sample_covariance(&DMatrix::zeros(0, 3), 0.0).is_err());
    }

    #[test]
    fn ridge_bounds_spectrum_and_symmetry_is_exact() {
        let x = random_matrix(4, 9, 1);
        let s = sample_covariance(&x, 0.01).unwrap();
        assert!(min_eigenvalue(s.matrix()) >= 0.01 - 1e-12);
        assert_eq!(s.matrix(), &s.matrix().transpose());
    }

    #[test]
    fn covariance_matches_two_pass_definition() {
        let x = random_matrix(50, 5, 2);
        let s = sample_covariance(&x, 0.0).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let mut acc = 0.0;
                for i in 0..50 {
                    acc += x[(i, a)] * x[(i, b)];
                }
                assert!((s.matrix()[(a, b)] - acc / 50.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn quad_form_cases() {
        let eye = RidgeCovariance::from_raw(DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(quad_form(&eye, &DVector::from_vec(vec![3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(quad_form(&eye, &DVector::zeros(2)).unwrap(), 0.0);
        assert!(quad_form(&eye, &DVector::zeros(3)).is_err());

        let s = sample_covariance(&random_matrix(20, 4, 3), 0.1).unwrap();
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let mut explicit = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                explicit += v[a] * s.matrix()[(a, b)] * v[b];
            }
        }
        assert!((quad_form(&s, &v).unwrap() - explicit).abs() <= 1e-12);
    }

    #[test]
    fn inverse_square_root() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((inv_sqrt_sym(&eye).unwrap() - &eye).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = inv_sqrt_sym(&d).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15 && (s[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);

        let a = random_matrix(3, 3, 4);
        let m = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let s = inv_sqrt_sym(&m).unwrap();
        assert!((&s * &m * &s - DMatrix::identity(3, 3)).norm() <= 1e-10 * 3.0);
        assert_eq!(s, s.transpose());

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(inv_sqrt_sym(&singular), Err(SkpdError::Numerical(_))));
    }

    #[test]
    fn sampling_degenerate_and_deterministic() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = cholesky_sample(&mean, &DMatrix::zeros(2, 2), 5, &mut rng).unwrap();
        assert!(draws.row_iter().all(|r| r[0] == 1.0 && r[1] == -2.0));

        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = cholesky_sample(&mean, &cov, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = cholesky_sample(&mean, &cov, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_matches_identity_covariance_at_large_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = cholesky_sample(&DVector::zeros(2), &DMatrix::identity(2, 2), 100_000, &mut rng).unwrap();
        let s = sample_covariance(&draws, 0.0).unwrap();
        assert!((s.matrix() - DMatrix::identity(2, 2)).amax() < 0.05);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = cholesky_sample(&DVector::zeros(2), &cov, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            SkpdError::Generation(msg) => assert!(msg.contains("-1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psd_rank_deficient_covariance_samples() {
        // rank-one PSD matrix needs the jitter ladder
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let cov = &v * v.transpose();
        let draws = cholesky_sample(&DVector::zeros(3), &cov, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for r in draws.row_iter() {
            assert!((r[1] - 2.0 * r[0]).abs() < 1e-3);
        }
    }
}
