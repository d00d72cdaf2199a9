//! Dense n-dimensional tensors of `f64`.
//!
//! Storage is row-major: the last index varies fastest. Every reshape in the
//! crate relies on this, so a reshape never moves data and a permute always
//! does.

use crate::error::{Error, Result};
use crate::gemm::{gemm_packed, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut index = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&index));
            for k in (0..shape.len()).rev() {
                index[k] += 1;
                if index[k] < shape[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, e)| i >= e) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index.iter().zip(strides(&self.shape)).map(|(i, s)| i * s).sum())
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Reinterprets the data under `new_shape`. One entry may be `-1`, in
    /// which case that extent is inferred.
    pub fn reshape(&self, new_shape: &[isize]) -> Result<Self> {
        let shape = self.resolve_shape(new_shape)?;
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    /// Consuming reshape with explicit extents; never copies.
    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ExtentProduct {
                from: self.shape,
                from_len: self.data.len(),
                to: format!("{shape:?}"),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    fn resolve_shape(&self, new_shape: &[isize]) -> Result<Vec<usize>> {
        let mismatch = || Error::ExtentProduct {
            from: self.shape.clone(),
            from_len: self.data.len(),
            to: format!("{new_shape:?}"),
        };
        let inferred: Vec<usize> = new_shape
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == -1)
            .map(|(k, _)| k)
            .collect();
        if inferred.len() > 1 || new_shape.iter().any(|&e| e < -1 || e == 0) {
            return Err(mismatch());
        }
        let known: usize = new_shape.iter().filter(|&&e| e > 0).map(|&e| e as usize).product();
        let mut shape: Vec<usize> = new_shape.iter().map(|&e| e.max(0) as usize).collect();
        if let Some(&k) = inferred.first() {
            if known == 0 || !self.data.len().is_multiple_of(known) {
                return Err(mismatch());
            }
            shape[k] = self.data.len() / known;
        }
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(mismatch());
        }
        check_shape(&shape)?;
        Ok(shape)
    }

    /// Reorders axes: output axis `k` is input axis `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        let valid = order.len() == rank
            && order.iter().all(|&a| {
                if a >= rank || seen[a] {
                    false
                } else {
                    seen[a] = true;
                    true
                }
            });
        if !valid {
            return Err(Error::InvalidPermutation {
                order: order.to_vec(),
                rank,
            });
        }
        let new_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let gather: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut index = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for k in (0..rank).rev() {
                index[k] += 1;
                src += gather[k];
                if index[k] < new_shape[k] {
                    break;
                }
                src -= gather[k] * new_shape[k];
                index[k] = 0;
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_matrix("transpose")?;
        self.permute(&[1, 0])
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    fn expect_matrix(&self, op: &'static str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        DenseTensor::new(vec![m, n], out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        sum_sq(&self.data).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &DenseTensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        Ok(self
            .zip_with(other, "max_abs_diff", |a, b| (a - b).abs())?
            .data
            .into_iter()
            .fold(0.0, f64::max))
    }
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.frobenius_norm()
}

pub(crate) fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// `c = a · b` for row-major `a` (m×k) and `b` (k×n). `c` is overwritten.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_packed(m, k, n, a, Layout::Normal, b, Layout::Normal, c, false);
}

/// `c += a · b`.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_packed(m, k, n, a, Layout::Normal, b, Layout::Normal, c, true);
}

/// `c += aᵀ · b` for `a` (k×m) and `b` (k×n).
pub(crate) fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_packed(m, k, n, a, Layout::Transposed, b, Layout::Normal, c, true);
}

/// `c = a · bᵀ` for `a` (m×k) and `b` (n×k).
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_packed(m, k, n, a, Layout::Normal, b, Layout::Transposed, c, false);
}

/// Swaps the two middle axes of a `[p, a, b, q]` block layout, giving `[p, b, a, q]`.
pub(crate) fn swap_middle(p: usize, a: usize, b: usize, q: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p * a * b * q];
    for pi in 0..p {
        let base = pi * a * b * q;
        for ai in 0..a {
            for bi in 0..b {
                let s = base + (ai * b + bi) * q;
                let d = base + (bi * a + ai) * q;
                out[d..d + q].copy_from_slice(&src[s..s + q]);
            }
        }
    }
    out
}
