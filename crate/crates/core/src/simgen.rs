//! Synthetic image/genetic/outcome triples with a known canonical structure.
//!
//! `(vec(X), z)` is jointly Gaussian with cross-covariance
//! `rho1 * Sigma_x c theta^T Sigma_z`, where `c` and `theta` are scaled to
//! unit projected variance. The outcome is then built so that its sample
//! correlation with `<X_i, C>` equals `rho2` exactly.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SkpdError};
use crate::linalg::{psd_cholesky_factor, sample_with_factor};
use crate::tensor::{reshape_r, BlockShape, DenseTensor};

/// Block extents used to place the block-shaped signals.
pub const SHAPE_BLOCK: [usize; 2] = [8, 8];

const STREAM_THETA: u64 = 0;
const STREAM_XZ: u64 = 1;
const STREAM_Y: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovFamily {
    Identity,
    /// `Sigma(j, k) = decay^|j - k|` over the vectorized index.
    Toeplitz {
        decay: f64,
    },
}

impl CovFamily {
    pub fn toeplitz() -> Self {
        CovFamily::Toeplitz { decay: 0.9 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CovFamily::Identity => "identity",
            CovFamily::Toeplitz { .. } => "toeplitz",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(CovFamily::Identity),
            "toeplitz" => Ok(CovFamily::toeplitz()),
            other => Err(SkpdError::InvalidInput(format!("unknown covariance family '{other}'"))),
        }
    }

    pub fn matrix(&self, dim: usize) -> DMatrix<f64> {
        match *self {
            CovFamily::Identity => DMatrix::identity(dim, dim),
            CovFamily::Toeplitz { decay } => DMatrix::from_fn(dim, dim, |j, k| decay.powi(j.abs_diff(k) as i32)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalShape {
    /// One 8x8 block at grid position `at`.
    OneBlock {
        at: [usize; 2],
    },
    /// Three disjoint 8x8 blocks.
    ThreeBlock {
        at: [[usize; 2]; 3],
    },
    /// A fixed procedural mask that is not a low-rank block sum.
    Butterfly,
    Custom {
        mask: DenseTensor,
    },
}

impl SignalShape {
    pub fn one_block() -> Self {
        SignalShape::OneBlock { at: [1, 1] }
    }

    pub fn three_block() -> Self {
        SignalShape::ThreeBlock {
            at: [[0, 0], [1, 2], [3, 1]],
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "one_block" | "1-block" => Ok(Self::one_block()),
            "three_block" | "3-block" => Ok(Self::three_block()),
            "butterfly" => Ok(SignalShape::Butterfly),
            other => Err(SkpdError::InvalidInput(format!("unknown signal shape '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SignalShape::OneBlock { .. } => "1-block",
            SignalShape::ThreeBlock { .. } => "3-block",
            SignalShape::Butterfly => "butterfly",
            SignalShape::Custom { .. } => "custom",
        }
    }
}

fn planar_dims(dims: &[usize]) -> Result<(usize, usize)> {
    match dims {
        [a, b] | [a, b, 1] => Ok((*a, *b)),
        _ => Err(SkpdError::InvalidInput(format!(
            "signal shapes are planar; got image dims {dims:?}"
        ))),
    }
}

fn butterfly_pixel(i: usize, j: usize, n1: usize, n2: usize) -> bool {
    let x = (j as f64 + 0.5 - n2 as f64 / 2.0) / (n2 as f64 / 2.0);
    let y = (i as f64 + 0.5 - n1 as f64 / 2.0) / (n1 as f64 / 2.0);
    let r = x.hypot(y);
    let phi = y.atan2(x);
    let wing = 0.78 * (2.0 * phi).sin().abs().powf(0.6) * (1.0 + 0.25 * (2.0 * phi).cos());
    let body = x.abs() < 0.07 && y.abs() < 0.55;
    r <= wing || body
}

/// Binary mask of the requested shape at image extents `dims`.
pub fn make_signal_shape(kind: &SignalShape, dims: &[usize]) -> Result<DenseTensor> {
    let (n1, n2) = planar_dims(dims)?;
    let [b1, b2] = SHAPE_BLOCK;
    let blocks = |at: &[[usize; 2]]| -> Result<DenseTensor> {
        for (k, a) in at.iter().enumerate() {
            if (a[0] + 1) * b1 > n1 || (a[1] + 1) * b2 > n2 {
                return Err(SkpdError::InvalidInput(format!(
                    "block at grid position {a:?} does not fit in {n1}x{n2}"
                )));
            }
            if at[..k].contains(a) {
                return Err(SkpdError::InvalidInput(format!("block position {a:?} repeated")));
            }
        }
        DenseTensor::from_fn(dims.to_vec(), |[i, j, _]| {
            let hit = at.iter().any(|a| i / b1 == a[0] && j / b2 == a[1]);
            f64::from(u8::from(hit))
        })
    };
    match kind {
        SignalShape::OneBlock { at } => blocks(&[*at]),
        SignalShape::ThreeBlock { at } => blocks(at),
        SignalShape::Butterfly => {
            if n1 < 16 || n2 < 16 {
                return Err(SkpdError::InvalidInput(format!(
                    "butterfly needs at least 16x16, got {n1}x{n2}"
                )));
            }
            DenseTensor::from_fn(dims.to_vec(), |[i, j, _]| {
                f64::from(u8::from(butterfly_pixel(i, j, n1, n2)))
            })
        }
        SignalShape::Custom { mask } => {
            if mask.dims() != dims {
                return Err(SkpdError::dim(format!(
                    "custom mask has dims {:?}, images are {dims:?}",
                    mask.dims()
                )));
            }
            if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(SkpdError::InvalidInput("custom mask must be binary".into()));
            }
            Ok(mask.clone())
        }
    }
}

/// Rank of `reshape_R(mask)` for the given blocks, i.e. the fewest
/// Kronecker terms that represent the mask exactly.
pub fn kronecker_rank(mask: &DenseTensor, block_dims: &[usize]) -> Result<usize> {
    let shape = BlockShape::new(mask.dims(), block_dims)?;
    let r = reshape_r(mask, &shape)?;
    let sv = r.singular_values();
    let top = sv.max();
    Ok(sv.iter().filter(|&&s| s > top * 1e-10).count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub image_dims: Vec<usize>,
    pub q: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub cov_family: CovFamily,
    pub shape: SignalShape,
    pub theta_sparsity: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            image_dims: vec![32, 32],
            q: 100,
            rho1: 0.8,
            rho2: 0.6,
            cov_family: CovFamily::Identity,
            shape: SignalShape::one_block(),
            theta_sparsity: 5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SkpdError::InvalidInput(m));
        if !(0.0..1.0).contains(&self.rho1) {
            return bad(format!("rho1 must be in [0, 1), got {}", self.rho1));
        }
        if !(0.0..=1.0).contains(&self.rho2) {
            return bad(format!("rho2 must be in [0, 1], got {}", self.rho2));
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if self.theta_sparsity == 0 || self.theta_sparsity > self.q {
            return bad(format!(
                "theta sparsity must be in 1..={}, got {}",
                self.q, self.theta_sparsity
            ));
        }
        if let CovFamily::Toeplitz { decay } = self.cov_family {
            if !(0.0..1.0).contains(&decay) {
                return bad(format!("Toeplitz decay must be in [0, 1), got {decay}"));
            }
        }
        planar_dims(&self.image_dims)?;
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.image_dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Binary signal mask.
    pub mask: DenseTensor,
    /// Mask scaled to unit variance of `<X, C>`.
    pub c_true: DenseTensor,
    /// Equal-valued sparse vector with unit Euclidean norm.
    pub theta_unit: Vec<f64>,
    /// `theta_unit` scaled to unit variance of `z^T theta`.
    pub theta_true: Vec<f64>,
    pub c_support: Vec<usize>,
    pub theta_support: Vec<usize>,
}

fn projected_sd(sigma: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let var = v.dot(&(sigma * v));
    if !(var > 0.0) {
        return Err(SkpdError::Generation(
            "signal direction has zero projected variance".into(),
        ));
    }
    Ok(var.sqrt())
}

/// Mask, sparse `theta` and their unit-variance rescalings.
pub fn make_ground_truth(cfg: &SimConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mask = make_signal_shape(&cfg.shape, &cfg.image_dims)?;
    let c_support: Vec<usize> = (0..mask.len()).filter(|&v| mask.data()[v] != 0.0).collect();
    if c_support.is_empty() {
        return Err(SkpdError::Generation("signal mask is empty".into()));
    }

    let mut rng = rng_for(cfg.seed, STREAM_THETA);
    let mut theta_support = index::sample(&mut rng, cfg.q, cfg.theta_sparsity).into_vec();
    theta_support.sort_unstable();
    let level = 1.0 / (cfg.theta_sparsity as f64).sqrt();
    let mut theta_unit = vec![0.0; cfg.q];
    for &j in &theta_support {
        theta_unit[j] = level;
    }

    let c = DVector::from_column_slice(mask.data());
    let c_scale = projected_sd(&cfg.cov_family.matrix(cfg.voxels()), &c)?;
    let t = DVector::from_column_slice(&theta_unit);
    let t_scale = projected_sd(&cfg.cov_family.matrix(cfg.q), &t)?;

    Ok(GroundTruth {
        c_true: mask.scale(1.0 / c_scale),
        theta_true: theta_unit.iter().map(|v| v / t_scale).collect(),
        mask,
        theta_unit,
        c_support,
        theta_support,
    })
}

/// Joint covariance of `(vec(X), z)` with its verified Cholesky factor.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    voxels: usize,
}

impl JointCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn cross(&self) -> DMatrix<f64> {
        let d = self.voxels;
        let q = self.matrix.nrows() - d;
        self.matrix.view((0, d), (d, q)).into_owned()
    }
}

/// `[[Sigma_x, Sigma_xz], [Sigma_xz^T, Sigma_z]]` with
/// `Sigma_xz = rho1 Sigma_x c theta^T Sigma_z`.
pub fn build_joint_covariance(cfg: &SimConfig, truth: &GroundTruth) -> Result<JointCovariance> {
    cfg.validate()?;
    let d = cfg.voxels();
    let q = cfg.q;
    if truth.c_true.len() != d || truth.theta_true.len() != q {
        return Err(SkpdError::dim("ground truth does not match configuration"));
    }
    let sx = cfg.cov_family.matrix(d);
    let sz = cfg.cov_family.matrix(q);
    let u = &sx * DVector::from_column_slice(truth.c_true.data());
    let w = &sz * DVector::from_column_slice(&truth.theta_true);

    let mut m = DMatrix::zeros(d + q, d + q);
    m.view_mut((0, 0), (d, d)).copy_from(&sx);
    m.view_mut((d, d), (q, q)).copy_from(&sz);
    for k in 0..q {
        for j in 0..d {
            let v = cfg.rho1 * u[j] * w[k];
            m[(j, d + k)] = v;
            m[(d + k, j)] = v;
        }
    }
    let factor = psd_cholesky_factor(&m)?;
    Ok(JointCovariance {
        matrix: m,
        factor,
        voxels: d,
    })
}

/// `n` joint draws, split into an `n x D` image matrix and an `n x q`
/// genetic matrix.
pub fn generate_xz(cfg: &SimConfig, cov: &JointCovariance, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = cfg.voxels();
    if cov.matrix.nrows() != d + cfg.q {
        return Err(SkpdError::dim("covariance does not match configuration"));
    }
    let mut rng = rng_for(seed, STREAM_XZ);
    let draws = sample_with_factor(&DVector::zeros(d + cfg.q), &cov.factor, cfg.n, &mut rng);
    let images = draws.columns(0, d).into_owned();
    let genetics = draws.columns(d, cfg.q).into_owned();
    Ok((images, genetics))
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Outcome whose sample correlation with `x* = (<X_i, C>)_i` is exactly `rho2`.
pub fn generate_y(images: &DMatrix<f64>, truth: &GroundTruth, rho2: f64, seed: u64) -> Result<DVector<f64>> {
    let n = images.nrows();
    if n < 3 {
        return Err(SkpdError::Generation(format!("need at least 3 samples, got {n}")));
    }
    if !(0.0..=1.0).contains(&rho2) {
        return Err(SkpdError::InvalidInput(format!("rho2 must be in [0, 1], got {rho2}")));
    }
    if images.ncols() != truth.c_true.len() {
        return Err(SkpdError::dim("images do not match ground truth"));
    }
    let x_star = images * DVector::from_column_slice(truth.c_true.data());
    let x_mean = x_star.mean();
    let xc = x_star.add_scalar(-x_mean);
    let sxx = xc.norm_squared();
    if !(sxx > 0.0) {
        return Err(SkpdError::Generation("image variate is constant".into()));
    }

    let mut rng = rng_for(seed, STREAM_Y);
    let y_star = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let yc = y_star.add_scalar(-y_star.mean());
    let slope = yc.dot(&xc) / sxx;
    let resid = yc - &xc * slope;

    let sd_resid = sample_sd(&resid);
    if !(sd_resid > 0.0) {
        return Err(SkpdError::Generation("outcome residual is constant".into()));
    }
    let sd_x = sample_sd(&x_star);
    Ok(x_star * (rho2 * sd_resid) + resid * ((1.0 - rho2 * rho2).sqrt() * sd_x))
}

/// Ground truth, joint draws and outcome for one configuration.
pub fn generate_dataset(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    let truth = make_ground_truth(cfg)?;
    let cov = build_joint_covariance(cfg, &truth)?;
    let (images, genetics) = generate_xz(cfg, &cov, cfg.seed)?;
    let outcome = generate_y(&images, &truth, cfg.rho2, cfg.seed)?;
    let data = Dataset::new(cfg.image_dims.clone(), images, genetics, outcome)?;
    Ok((data, truth))
}

/// Committed rendering of the 32x32 butterfly, `#` for signal pixels.
pub const BUTTERFLY_GOLDEN: &str = include_str!("../assets/butterfly_32x32.txt");

pub fn render_mask(mask: &DenseTensor) -> Result<String> {
    let (n1, n2) = planar_dims(mask.dims())?;
    let mut out = String::with_capacity(n1 * (n2 + 1));
    for i in 0..n1 {
        for j in 0..n2 {
            out.push(if mask.data()[i * n2 + j] != 0.0 { '#' } else { '.' });
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_mask(text: &str) -> Result<DenseTensor> {
    let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let n2 = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != n2) {
        return Err(SkpdError::InvalidInput(
            "mask rows must be nonempty and equally long".into(),
        ));
    }
    let mut data = Vec::with_capacity(rows.len() * n2);
    for r in &rows {
        for ch in r.chars() {
            data.push(match ch {
                '#' | '1' => 1.0,
                '.' | '0' => 0.0,
                other => return Err(SkpdError::InvalidInput(format!("unexpected mask character '{other}'"))),
            });
        }
    }
    DenseTensor::new(vec![rows.len(), n2], data)
}
