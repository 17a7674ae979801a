//! Full (uncompressed) tensors, used as contraction oracles and for
//! TT-SVD construction from explicit data. Only viable for small `d`.

use crate::error::{Error, Result};

/// Dense `d`-dimensional array with row-major layout (`i_1` slowest,
/// `i_d` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for k in 0..t.data.len() {
            t.data[k] = f(&idx);
            Self::advance(&mut idx, shape);
        }
        t
    }

    fn advance(idx: &mut [usize], shape: &[usize]) {
        for l in (0..idx.len()).rev() {
            idx[l] += 1;
            if idx[l] < shape[l] {
                return;
            }
            idx[l] = 0;
        }
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut k = 0;
        for (l, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[l]);
            k = k * self.shape[l] + i;
        }
        k
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Relative Frobenius distance `||a - b||_F / ||b||_F` (absolute when
    /// `b` is zero).
    pub fn rel_distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "dense tensors {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = other.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "dense tensors {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Iterate over all multi-indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let shape = self.shape.clone();
        let len = self.data.len();
        let mut idx = vec![0usize; shape.len()];
        let mut first = true;
        (0..len).map(move |_| {
            if first {
                first = false;
            } else {
                Self::advance(&mut idx, &shape);
            }
            idx.clone()
        })
    }
}
