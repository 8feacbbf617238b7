//! Cross-moment backends for the alternating fit.
//!
//! Every quantity the solver needs is a contraction of the second moments
//! of the block-reshaped images, genetics and outcome. Small images use a
//! precomputed voxel covariance (`Dense`), large ones recompute the
//! contractions from the samples (`Streaming`). Both are indexed in
//! reshaped order: voxel `(block j, offset u)` sits at `j * d + u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::tensor::BlockShape;

/// Which backend to use for the image second moments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsStrategy {
    /// Dense when the image has at most [`DENSE_VOXEL_LIMIT`] voxels.
    #[default]
    Auto,
    Dense,
    Streaming,
}

pub const DENSE_VOXEL_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
enum Backend {
    Dense {
        sxx: DMatrix<f64>,
        sxz: DMatrix<f64>,
        sxy: DVector<f64>,
    },
    Streaming {
        images: DMatrix<f64>,
        genetics: DMatrix<f64>,
        outcome: DVector<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct CrossMoments {
    shape: BlockShape,
    n: usize,
    szz: DMatrix<f64>,
    szy: DVector<f64>,
    backend: Backend,
}

impl CrossMoments {
    pub fn new(data: &Dataset, shape: BlockShape, strategy: MomentsStrategy) -> Self {
        let n = data.n();
        let nf = n as f64;
        let perm = shape.r_permutation();
        let images = DMatrix::from_fn(n, perm.len(), |i, a| data.images()[(i, perm[a])]);
        let z = data.genetics();
        let y = data.outcome();
        let szz = z.transpose() * z / nf;
        let szy = z.transpose() * y / nf;
        let dense = match strategy {
            MomentsStrategy::Auto => perm.len() <= DENSE_VOXEL_LIMIT,
            MomentsStrategy::Dense => true,
            MomentsStrategy::Streaming => false,
        };
        let backend = if dense {
            let xt = images.transpose();
            Backend::Dense {
                sxx: &xt * &images / nf,
                sxz: &xt * z / nf,
                sxy: &xt * y / nf,
            }
        } else {
            Backend::Streaming {
                images,
                genetics: z.clone(),
                outcome: y.clone(),
            }
        };
        Self {
            shape,
            n,
            szz,
            szy,
            backend,
        }
    }

    pub fn shape(&self) -> &BlockShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.backend, Backend::Dense { .. })
    }

    /// `(1/n) Z^T Z`.
    pub fn genetic_gram(&self) -> &DMatrix<f64> {
        &self.szz
    }

    /// `(1/n) Z^T y`.
    pub fn genetic_outcome(&self) -> &DVector<f64> {
        &self.szy
    }

    /// `(1/n) sum_i (z_i^T theta + y_i) x_i` in reshaped order.
    pub fn image_response(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { sxz, sxy, .. } => sxz * theta + sxy,
            Backend::Streaming {
                images,
                genetics,
                outcome,
            } => {
                let w = genetics * theta + outcome;
                images.transpose() * w / self.n as f64
            }
        }
    }

    /// `(1/n) sum_i (<x_i, c> + y_i) z_i` for a reshaped-order coefficient `c`.
    pub fn genetic_response(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { sxz, .. } => sxz.transpose() * c + &self.szy,
            Backend::Streaming {
                images,
                genetics,
                outcome,
            } => {
                let w = images * c + outcome;
                genetics.transpose() * w / self.n as f64
            }
        }
    }

    /// `(1/n) sum_i <x_i, c>^2`.
    pub fn image_variance(&self, c: &DVector<f64>) -> f64 {
        match &self.backend {
            Backend::Dense { sxx, .. } => c.dot(&(sxx * c)),
            Backend::Streaming { images, .. } => (images * c).norm_squared() / self.n as f64,
        }
    }

    /// Second moment of the stacked features `vec(X_i beta)`, `(pR) x (pR)`,
    /// without ridge.
    pub fn gram_given_dictionaries(&self, betas: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.shape.n_blocks();
        let d = self.shape.block_len();
        let rank = betas.ncols();
        match &self.backend {
            Backend::Dense { sxx, .. } => {
                let vol = sxx.nrows();
                let mut t = DMatrix::zeros(vol, p * rank);
                for s in 0..rank {
                    for k in 0..p {
                        let mut col = t.column_mut(s * p + k);
                        for v in 0..d {
                            let b = betas[(v, s)];
                            if b != 0.0 {
                                col.axpy(b, &sxx.column(k * d + v), 1.0);
                            }
                        }
                    }
                }
                let mut g = DMatrix::zeros(p * rank, p * rank);
                for col in 0..p * rank {
                    for r in 0..rank {
                        for j in 0..p {
                            let mut acc = 0.0;
                            for u in 0..d {
                                acc += betas[(u, r)] * t[(j * d + u, col)];
                            }
                            g[(r * p + j, col)] = acc;
                        }
                    }
                }
                g
            }
            Backend::Streaming { images, .. } => {
                let n = images.nrows();
                let mut xb = DMatrix::zeros(n, p * rank);
                for r in 0..rank {
                    let beta = betas.column(r);
                    for j in 0..p {
                        let block = images.columns(j * d, d);
                        xb.set_column(r * p + j, &(block * beta));
                    }
                }
                xb.transpose() * &xb / n as f64
            }
        }
    }

    /// Second moment of the stacked features `vec(X_i^T alpha)`, `(dR) x (dR)`,
    /// without ridge.
    pub fn gram_given_indicators(&self, alphas: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.shape.n_blocks();
        let d = self.shape.block_len();
        let rank = alphas.ncols();
        match &self.backend {
            Backend::Dense { sxx, .. } => {
                let vol = sxx.nrows();
                let mut u_mat = DMatrix::zeros(vol, d * rank);
                for s in 0..rank {
                    for k in 0..p {
                        let a = alphas[(k, s)];
                        if a == 0.0 {
                            continue;
                        }
                        for v in 0..d {
                            u_mat.column_mut(s * d + v).axpy(a, &sxx.column(k * d + v), 1.0);
                        }
                    }
                }
                let mut g = DMatrix::zeros(d * rank, d * rank);
                for r in 0..rank {
                    for j in 0..p {
                        let a = alphas[(j, r)];
                        if a == 0.0 {
                            continue;
                        }
                        for col in 0..d * rank {
                            for u in 0..d {
                                g[(r * d + u, col)] += a * u_mat[(j * d + u, col)];
                            }
                        }
                    }
                }
                g
            }
            Backend::Streaming { images, .. } => {
                let n = images.nrows();
                let mut xa = DMatrix::zeros(n, d * rank);
                for r in 0..rank {
                    for j in 0..p {
                        let a = alphas[(j, r)];
                        if a != 0.0 {
                            let mut target = xa.columns_mut(r * d, d);
                            target += images.columns(j * d, d) * a;
                        }
                    }
                }
                xa.transpose() * &xa / n as f64
            }
        }
    }
}

/// Reshaped-order coefficient `sum_r alpha_r (x) beta_r`.
pub fn compose_reshaped(alphas: &DMatrix<f64>, betas: &DMatrix<f64>) -> DVector<f64> {
    let (p, d) = (alphas.nrows(), betas.nrows());
    let mut c = DVector::zeros(p * d);
    for r in 0..alphas.ncols() {
        for j in 0..p {
            let a = alphas[(j, r)];
            if a == 0.0 {
                continue;
            }
            for u in 0..d {
                c[j * d + u] += a * betas[(u, r)];
            }
        }
    }
    c
}

/// Stacked `(pR)` vector with entry `r p + j = beta_r^T m_j`, where `m_j` is
/// block `j` of the reshaped-order vector `m`.
pub fn contract_with_dictionaries(m: &DVector<f64>, betas: &DMatrix<f64>) -> DVector<f64> {
    let d = betas.nrows();
    let p = m.len() / d;
    let rank = betas.ncols();
    DVector::from_fn(p * rank, |idx, _| {
        let (r, j) = (idx / p, idx % p);
        (0..d).map(|u| betas[(u, r)] * m[j * d + u]).sum()
    })
}

/// Stacked `(dR)` vector with entry `r d + u = sum_j alpha_r[j] m[j d + u]`.
pub fn contract_with_indicators(m: &DVector<f64>, alphas: &DMatrix<f64>) -> DVector<f64> {
    let p = alphas.nrows();
    let d = m.len() / p;
    let rank = alphas.ncols();
    let mut out = DVector::zeros(d * rank);
    for r in 0..rank {
        for j in 0..p {
            let a = alphas[(j, r)];
            if a == 0.0 {
                continue;
            }
            for u in 0..d {
                out[r * d + u] += a * m[j * d + u];
            }
        }
    }
    out
}
