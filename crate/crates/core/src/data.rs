use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkpdError};
use crate::tensor::{dims_of_order, pad3, DenseTensor};

/// `n` samples of (image, genetic vector, scalar outcome).
///
/// Images are held as an `n x D` matrix whose rows are row-major
/// vectorized tensors of the common extents `image_dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    image_dims: Vec<usize>,
    images: DMatrix<f64>,
    genetics: DMatrix<f64>,
    outcome: DVector<f64>,
    centered: bool,
    outcome_standardized: bool,
    preprocessing: Option<Preprocessing>,
}

/// Parameters of the centering/standardization applied by [`preprocess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub image_means: Vec<f64>,
    pub genetic_means: Vec<f64>,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
}

impl Dataset {
    pub fn new(
        image_dims: Vec<usize>,
        images: DMatrix<f64>,
        genetics: DMatrix<f64>,
        outcome: DVector<f64>,
    ) -> Result<Self> {
        dims_of_order(pad3(&image_dims), image_dims.len())?;
        let n = outcome.len();
        if n == 0 {
            return Err(SkpdError::dim("dataset has no samples"));
        }
        if images.nrows() != n || genetics.nrows() != n {
            return Err(SkpdError::dim(format!(
                "sample counts differ: {} images, {} genetic rows, {} outcomes",
                images.nrows(),
                genetics.nrows(),
                n
            )));
        }
        let vol: usize = image_dims.iter().product();
        if images.ncols() != vol {
            return Err(SkpdError::dim(format!(
                "images have {} voxels, dims {:?} need {}",
                images.ncols(),
                image_dims,
                vol
            )));
        }
        if genetics.ncols() == 0 {
            return Err(SkpdError::dim("genetic block has no columns"));
        }
        let finite = images
            .iter()
            .chain(genetics.iter())
            .chain(outcome.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(SkpdError::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self {
            image_dims,
            images,
            genetics,
            outcome,
            centered: false,
            outcome_standardized: false,
            preprocessing: None,
        })
    }

    /// Builds a dataset from individual image tensors.
    pub fn from_tensors(images: &[DenseTensor], genetics: DMatrix<f64>, outcome: DVector<f64>) -> Result<Self> {
        let first = images.first().ok_or_else(|| SkpdError::dim("dataset has no samples"))?;
        let dims = first.dims().to_vec();
        if images.iter().any(|t| t.dims() != dims.as_slice()) {
            return Err(SkpdError::dim("images have differing dims"));
        }
        let vol = first.len();
        let mat = DMatrix::from_fn(images.len(), vol, |i, j| images[i].data()[j]);
        Self::new(dims, mat, genetics, outcome)
    }

    /// Marks an already centered/standardized dataset as such.
    pub fn assume_preprocessed(mut self) -> Self {
        self.centered = true;
        self.outcome_standardized = true;
        self
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn q(&self) -> usize {
        self.genetics.ncols()
    }

    pub fn image_dims(&self) -> &[usize] {
        &self.image_dims
    }

    pub fn images(&self) -> &DMatrix<f64> {
        &self.images
    }

    pub fn image(&self, i: usize) -> DenseTensor {
        DenseTensor::new(self.image_dims.clone(), self.images.row(i).iter().copied().collect())
            .expect("rows match image dims")
    }

    pub fn genetics(&self) -> &DMatrix<f64> {
        &self.genetics
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.outcome
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_outcome_standardized(&self) -> bool {
        self.outcome_standardized
    }

    pub fn preprocessing(&self) -> Option<&Preprocessing> {
        self.preprocessing.as_ref()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.centered && self.outcome_standardized
    }
}

fn center_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    let mut means = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        means.push(mean);
    }
    means
}

/// Centers every voxel and genetic column; standardizes the outcome to
/// mean 0 and population variance 1.
pub fn preprocess(raw: &Dataset) -> Result<Dataset> {
    let n = raw.n();
    if n < 2 {
        return Err(SkpdError::Preprocess(format!("need at least 2 samples, got {n}")));
    }
    let mut images = raw.images.clone();
    let image_means = center_columns(&mut images);
    let mut genetics = raw.genetics.clone();
    let genetic_means = center_columns(&mut genetics);

    let outcome_mean = raw.outcome.mean();
    let centered = raw.outcome.add_scalar(-outcome_mean);
    let outcome_sd = (centered.norm_squared() / n as f64).sqrt();
    if !(outcome_sd > 0.0) {
        return Err(SkpdError::Preprocess("outcome has zero variance".into()));
    }
    let outcome = centered / outcome_sd;

    Ok(Dataset {
        image_dims: raw.image_dims.clone(),
        images,
        genetics,
        outcome,
        centered: true,
        outcome_standardized: true,
        preprocessing: Some(Preprocessing {
            image_means,
            genetic_means,
            outcome_mean,
            outcome_sd,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(outcome: Vec<f64>) -> Dataset {
        let n = outcome.len();
        let images = DMatrix::from_fn(n, 4, |i, j| (i * 3 + j * j) as f64);
        let genetics = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 5.0 } else { i as f64 });
        Dataset::new(vec![2, 2], images, genetics, DVector::from_vec(outcome)).unwrap()
    }

    #[test]
    fn standardizes_outcome_with_population_variance() {
        let d = preprocess(&toy(vec![1.0, 2.0, 3.0])).unwrap();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in d.outcome().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(d.is_preprocessed());
        let pp = d.preprocessing().unwrap();
        assert_eq!(pp.outcome_mean, 2.0);
    }

    #[test]
    fn constant_genetic_column_becomes_zero() {
        let d = preprocess(&toy(vec![1.0, 2.0, 4.0])).unwrap();
        assert!(d.genetics().column(0).iter().all(|&v| v == 0.0));
        for col in d.images().column_iter() {
            assert!(col.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let once = preprocess(&toy(vec![0.5, -1.0, 2.0, 7.0])).unwrap();
        let twice = preprocess(&once).unwrap();
        assert!((once.images() - twice.images()).amax() < 1e-12);
        assert!((once.genetics() - twice.genetics()).amax() < 1e-12);
        assert!((once.outcome() - twice.outcome()).amax() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            preprocess(&toy(vec![3.0, 3.0, 3.0])),
            Err(SkpdError::Preprocess(_))
        ));
        assert!(matches!(preprocess(&toy(vec![3.0])), Err(SkpdError::Preprocess(_))));
        let bad = Dataset::new(
            vec![2, 2],
            DMatrix::zeros(3, 5),
            DMatrix::zeros(3, 1),
            DVector::zeros(3),
        );
        assert!(matches!(bad, Err(SkpdError::Dimension(_))));
    }
}
