//! Penalized quadratic subproblems in covariance (Gram) form.
//!
//! The whitened least-squares Lasso `1/2 ||S^{-1/2} b - S^{1/2} v||^2 + lambda ||v||_1`
//! equals `1/2 v^T S v - b^T v + lambda ||v||_1` up to a constant, so no
//! matrix square root is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SkpdError};
use crate::linalg::{cholesky_solve, quad_form, RidgeCovariance};

#[derive(Debug, Clone)]
pub struct PenalizedQuadProblem<'a> {
    pub gram: &'a RidgeCovariance,
    pub linear: &'a DVector<f64>,
    pub lambda: f64,
}

impl<'a> PenalizedQuadProblem<'a> {
    pub fn new(gram: &'a RidgeCovariance, linear: &'a DVector<f64>, lambda: f64) -> Result<Self> {
        if gram.dim() != linear.len() {
            return Err(SkpdError::dim(format!(
                "gram is {0}x{0} but linear term has {1} entries",
                gram.dim(),
                linear.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(SkpdError::InvalidInput(format!("penalty must be >= 0, got {lambda}")));
        }
        Ok(Self { gram, linear, lambda })
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(self.gram.matrix() * v)) - self.linear.dot(v) + self.lambda * v.lp_norm(1)
    }

    /// Largest coordinate-wise KKT violation at `v`.
    pub fn kkt_violation(&self, v: &DVector<f64>) -> f64 {
        let grad = self.gram.matrix() * v - self.linear;
        kkt_from_gradient(&grad, v, self.lambda)
    }
}

fn kkt_from_gradient(grad: &DVector<f64>, v: &DVector<f64>, lambda: f64) -> f64 {
    grad.iter()
        .zip(v.iter())
        .map(|(&g, &x)| {
            if x == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * x.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coef: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub kkt_violation: f64,
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent keeping the gradient `G v - b` up to date.
#[derive(Debug, Clone)]
pub struct CoordinateDescent<'p, 'a> {
    problem: &'p PenalizedQuadProblem<'a>,
    coef: DVector<f64>,
    grad: DVector<f64>,
}

impl<'p, 'a> CoordinateDescent<'p, 'a> {
    pub fn new(problem: &'p PenalizedQuadProblem<'a>, start: Option<&DVector<f64>>) -> Result<Self> {
        let dim = problem.linear.len();
        let coef = match start {
            Some(s) if s.len() == dim => s.clone(),
            Some(s) => {
                return Err(SkpdError::dim(format!(
                    "warm start has {} entries, problem has {dim}",
                    s.len()
                )))
            }
            None => DVector::zeros(dim),
        };
        let grad = if coef.iter().all(|&c| c == 0.0) {
            -problem.linear.clone()
        } else {
            problem.gram.matrix() * &coef - problem.linear
        };
        Ok(Self { problem, coef, grad })
    }

    pub fn coef(&self) -> &DVector<f64> {
        &self.coef
    }

    pub fn kkt_violation(&self) -> f64 {
        kkt_from_gradient(&self.grad, &self.coef, self.problem.lambda)
    }

    /// One full cyclic pass over the coordinates.
    pub fn sweep(&mut self) {
        let g = self.problem.gram.matrix();
        let lambda = self.problem.lambda;
        for j in 0..self.coef.len() {
            let gjj = g[(j, j)];
            let old = self.coef[j];
            let z = gjj * old - self.grad[j];
            let new = soft_threshold(z, lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                self.coef[j] = new;
                self.grad.axpy(delta, &g.column(j), 1.0);
            }
        }
    }
}

/// Minimizes `1/2 v^T G v - b^T v + lambda ||v||_1` by coordinate descent.
/// Returns the last iterate with `converged = false` when `max_sweeps` runs out.
pub fn solve_lasso_cd(
    problem: &PenalizedQuadProblem<'_>,
    start: Option<&DVector<f64>>,
    opts: LassoOptions,
) -> Result<LassoSolution> {
    let gram = problem.gram.matrix();
    if let Some(j) = (0..gram.nrows()).find(|&j| !(gram[(j, j)] > 0.0)) {
        return Err(SkpdError::Numerical(format!(
            "non-positive diagonal {} at coordinate {j}",
            gram[(j, j)]
        )));
    }
    if problem.linear.amax() <= problem.lambda && start.is_none() {
        // zero is optimal: |b_j| <= lambda everywhere
        return Ok(LassoSolution {
            coef: DVector::zeros(problem.linear.len()),
            converged: true,
            sweeps: 0,
            kkt_violation: 0.0,
        });
    }
    let mut cd = CoordinateDescent::new(problem, start)?;
    let mut violation = cd.kkt_violation();
    let mut sweeps = 0;
    while violation > opts.tol && sweeps < opts.max_sweeps {
        cd.sweep();
        sweeps += 1;
        violation = cd.kkt_violation();
    }
    Ok(LassoSolution {
        converged: violation <= opts.tol,
        kkt_violation: violation,
        sweeps,
        coef: cd.coef,
    })
}

/// Exact solution of `G v = b` for the ridge-regularized normal equations.
pub fn solve_ridge_ls(gram: &RidgeCovariance, linear: &DVector<f64>) -> Result<DVector<f64>> {
    if gram.dim() != linear.len() {
        return Err(SkpdError::dim(format!(
            "gram is {0}x{0} but linear term has {1} entries",
            gram.dim(),
            linear.len()
        )));
    }
    cholesky_solve(gram.matrix(), linear)
}

/// `v / sqrt(v^T S v)`, or the zero vector when the quadratic form vanishes.
pub fn normalize_to_unit_variance(v: &DVector<f64>, sigma: &RidgeCovariance) -> Result<DVector<f64>> {
    let q = quad_form(sigma, v)?;
    if q > 0.0 {
        Ok(v / q.sqrt())
    } else {
        Ok(DVector::zeros(v.len()))
    }
}

/// Same as [`normalize_to_unit_variance`] for a matrix of stacked columns,
/// treated as one long vector.
pub(crate) fn normalize_stacked(m: &DMatrix<f64>, sigma: &RidgeCovariance) -> Result<DMatrix<f64>> {
    let v = DVector::from_column_slice(m.as_slice());
    let n = normalize_to_unit_variance(&v, sigma)?;
    Ok(DMatrix::from_column_slice(m.nrows(), m.ncols(), n.as_slice()))
}
