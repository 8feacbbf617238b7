//! Three-block sparse canonical correlation analysis linking images, genetic
//! markers and an outcome, with the image coefficient expressed as a sparse
//! sum of Kronecker products.

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fit;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod moments;
pub mod selection;
pub mod simgen;
pub mod tensor;

pub use data::{preprocess, Dataset, Preprocessing};
pub use error::{Result, SkpdError};
pub use fit::{compose_c, fit, fit_naive_scca, objective, HyperParams, InitScheme, SkpdModel, SkpdProblem, Start};
pub use tensor::{kron, reshape_r, reshape_r_inverse, vec, vec_inverse, BlockShape, DenseTensor};
