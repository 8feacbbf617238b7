//! Dense order-2/order-3 tensors, Kronecker products and the block
//! reshaping operator that turns a blocked tensor into a
//! `(blocks x block-volume)` matrix.
//!
//! Vectorization is row-major everywhere (last index fastest). The same
//! convention is used inside blocks and for the ordering of blocks, which
//! makes `reshape_r(kron(a, b)) == vec(a) * vec(b)^T` hold exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkpdError};

/// Dense real tensor of order 2 or 3, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(SkpdError::dim(format!(
                "dims {:?} need {} entries, got {}",
                dims,
                len,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SkpdError::InvalidInput(format!(
                "non-finite tensor entry at flat index {pos}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every `[i, j, k]` (k = 0 for order 2).
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut([usize; 3]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        let [d1, d2, d3] = t.dims3();
        for i in 0..d1 {
            for j in 0..d2 {
                for k in 0..d3 {
                    t.data[(i * d2 + j) * d3 + k] = f([i, j, k]);
                }
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Extents padded to order 3 with a trailing 1.
    pub fn dims3(&self) -> [usize; 3] {
        pad3(&self.dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        let [_, d2, d3] = self.dims3();
        self.data[(idx[0] * d2 + idx[1]) * d3 + idx[2]]
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.dims3() != other.dims3() {
            return Err(SkpdError::dim(format!(
                "inner product of {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if !(dims.len() == 2 || dims.len() == 3) {
        return Err(SkpdError::dim(format!(
            "tensor order must be 2 or 3, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(SkpdError::dim(format!("zero extent in {dims:?}")));
    }
    Ok(())
}

pub(crate) fn pad3(dims: &[usize]) -> [usize; 3] {
    [dims[0], dims[1], dims.get(2).copied().unwrap_or(1)]
}

/// Row-major vectorization.
pub fn vec(t: &DenseTensor) -> Vec<f64> {
    t.data.clone()
}

pub fn vec_inverse(v: &[f64], dims: &[usize]) -> Result<DenseTensor> {
    DenseTensor::new(dims.to_vec(), v.to_vec())
}

/// Kronecker product of two tensors of equal order. Entry at block
/// `(j, k, l)`, offset `(u, v, w)` is `a[j, k, l] * b[u, v, w]`.
pub fn kron(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.order() != b.order() {
        return Err(SkpdError::dim(format!(
            "kron of order {} and order {} tensors",
            a.order(),
            b.order()
        )));
    }
    let [a1, a2, a3] = a.dims3();
    let [b1, b2, b3] = b.dims3();
    let dims: Vec<usize> = a.dims.iter().zip(&b.dims).map(|(x, y)| x * y).collect();
    let (o2, o3) = (a2 * b2, a3 * b3);
    let mut data = vec![0.0; dims.iter().product()];
    for j in 0..a1 {
        for k in 0..a2 {
            for l in 0..a3 {
                let av = a.data[(j * a2 + k) * a3 + l];
                if av == 0.0 {
                    continue;
                }
                for u in 0..b1 {
                    for v in 0..b2 {
                        let row = ((j * b1 + u) * o2 + k * b2 + v) * o3 + l * b3;
                        let brow = (u * b2 + v) * b3;
                        for w in 0..b3 {
                            data[row + w] = av * b.data[brow + w];
                        }
                    }
                }
            }
        }
    }
    Ok(DenseTensor { dims, data })
}

/// Partition of a `D1 x D2 x D3` tensor into a `p1 x p2 x p3` grid of
/// `d1 x d2 x d3` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    full: [usize; 3],
    block: [usize; 3],
    grid: [usize; 3],
}

impl BlockShape {
    pub fn new(full_dims: &[usize], block_dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&full_dims.len()) || !(2..=3).contains(&block_dims.len()) {
            return Err(SkpdError::dim("block shapes need 2 or 3 extents"));
        }
        let full = pad3(full_dims);
        let block = pad3(block_dims);
        let mut grid = [0; 3];
        for k in 0..3 {
            if full[k] == 0 || block[k] == 0 || !full[k].is_multiple_of(block[k]) {
                return Err(SkpdError::dim(format!(
                    "block dims {block:?} do not tile image dims {full:?}"
                )));
            }
            grid[k] = full[k] / block[k];
        }
        Ok(Self { full, block, grid })
    }

    pub fn full_dims(&self) -> [usize; 3] {
        self.full
    }

    pub fn block_dims(&self) -> [usize; 3] {
        self.block
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid
    }

    /// Number of blocks, `p1 p2 p3`.
    pub fn n_blocks(&self) -> usize {
        self.grid.iter().product()
    }

    /// Block volume, `d1 d2 d3`.
    pub fn block_len(&self) -> usize {
        self.block.iter().product()
    }

    pub fn volume(&self) -> usize {
        self.full.iter().product()
    }

    /// `perm[r]` is the row-major voxel index that lands at flat position
    /// `r = block * block_len + offset` of the reshaped matrix.
    pub fn r_permutation(&self) -> Vec<usize> {
        let [p1, p2, p3] = self.grid;
        let [d1, d2, d3] = self.block;
        let [_, f2, f3] = self.full;
        let mut perm = Vec::with_capacity(self.volume());
        for j in 0..p1 {
            for k in 0..p2 {
                for l in 0..p3 {
                    for u in 0..d1 {
                        for v in 0..d2 {
                            for w in 0..d3 {
                                let (x, y, z) = (j * d1 + u, k * d2 + v, l * d3 + w);
                                perm.push((x * f2 + y) * f3 + z);
                            }
                        }
                    }
                }
            }
        }
        perm
    }

    /// Voxel indices (row-major) covered by block `b`.
    pub fn block_voxels(&self, b: usize) -> Vec<usize> {
        let len = self.block_len();
        self.r_permutation()[b * len..(b + 1) * len].to_vec()
    }

    fn check(&self, t: &DenseTensor) -> Result<()> {
        if t.dims3() != self.full {
            return Err(SkpdError::dim(format!(
                "tensor dims {:?} incompatible with block shape over {:?}",
                t.dims(),
                self.full
            )));
        }
        Ok(())
    }
}

/// Block reshaping operator: row `b` holds the vectorized `b`-th block,
/// blocks enumerated with the third grid index fastest.
pub fn reshape_r(t: &DenseTensor, shape: &BlockShape) -> Result<DMatrix<f64>> {
    shape.check(t)?;
    let (p, d) = (shape.n_blocks(), shape.block_len());
    let perm = shape.r_permutation();
    Ok(DMatrix::from_fn(p, d, |b, o| t.data[perm[b * d + o]]))
}

pub fn reshape_r_inverse(m: &DMatrix<f64>, shape: &BlockShape, order: usize) -> Result<DenseTensor> {
    let (p, d) = (shape.n_blocks(), shape.block_len());
    if m.nrows() != p || m.ncols() != d {
        return Err(SkpdError::dim(format!(
            "reshaped matrix is {}x{}, block shape needs {p}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dims = dims_of_order(shape.full, order)?;
    let perm = shape.r_permutation();
    let mut data = vec![0.0; shape.volume()];
    for b in 0..p {
        for o in 0..d {
            data[perm[b * d + o]] = m[(b, o)];
        }
    }
    DenseTensor::new(dims, data)
}

pub(crate) fn dims_of_order(full: [usize; 3], order: usize) -> Result<Vec<usize>> {
    match order {
        2 if full[2] == 1 => Ok(vec![full[0], full[1]]),
        3 => Ok(full.to_vec()),
        _ => Err(SkpdError::dim(format!(
            "cannot express {full:?} as an order-{order} tensor"
        ))),
    }
}
