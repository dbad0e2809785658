//! Dense row-major tensors of `f64` values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// A dense tensor: a shape and a row-major value buffer.
///
/// Tensors are plain values. Gradient bookkeeping lives on the [`crate::Tape`],
/// which stores one `Tensor` per recorded node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape accounts for every value.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(CoreError::Domain(alloc::format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if expect != data.len() {
            return Err(CoreError::Dim {
                op: "tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Row vector `[1 x n]`.
    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor {
            shape: vec![1, n],
            data: values,
        }
    }

    /// Column vector `[n x 1]`.
    pub fn col(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor {
            shape: vec![n, 1],
            data: values,
        }
    }

    /// 2-D tensor from nested rows. All rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::Dim {
                    op: "tensor::from_rows",
                    lhs: vec![r, c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Interprets the tensor as 2-D, returning `(rows, cols)`.
    /// 1-D tensors are treated as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(CoreError::Dim {
                op: "tensor::dims2",
                lhs: self.shape.clone(),
                rhs: vec![2],
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
