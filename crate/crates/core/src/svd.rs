//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The columns of the working matrix are rotated pairwise until they are
//! mutually orthogonal; their norms are then the singular values. Output is
//! sorted by nonincreasing singular value and every column of `U` has its
//! largest-magnitude entry positive, so results are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const MAX_SWEEPS: usize = 100;
/// Pairs with `|<a_i, a_j>| <= TOLERANCE * |a_i| |a_j|` are treated as orthogonal.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// p×k, orthonormal columns.
    pub u: DenseTensor,
    /// Length k, nonincreasing.
    pub s: Vec<f64>,
    /// q×k, orthonormal columns.
    pub v: DenseTensor,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(S) · Vᵀ`, optionally keeping only the leading `keep` triplets.
    pub fn reconstruct(&self, keep: Option<usize>) -> DenseTensor {
        let (p, k) = (self.u.shape()[0], self.s.len());
        let q = self.v.shape()[0];
        let keep = keep.unwrap_or(k).min(k);
        let u = self.u.data();
        let v = self.v.data();
        let mut us = vec![0.0; p * keep];
        for i in 0..p {
            for j in 0..keep {
                us[i * keep + j] = u[i * k + j] * self.s[j];
            }
        }
        let mut vt = vec![0.0; keep * q];
        for i in 0..q {
            for j in 0..keep {
                vt[j * q + i] = v[i * k + j];
            }
        }
        let mut out = vec![0.0; p * q];
        crate::tensor::gemm(p, keep, q, &us, &vt, &mut out);
        DenseTensor::new(vec![p, q], out).expect("shape is consistent by construction")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn rotate(cols: &mut [f64], len: usize, i: usize, j: usize, c: f64, s: f64) {
    debug_assert!(i < j);
    let (head, rest) = cols.split_at_mut(j * len);
    let ci = &mut head[i * len..(i + 1) * len];
    let cj = &mut rest[..len];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Jacobi on a tall matrix stored column-major (`rows >= cols`).
/// Returns (U column-major rows×cols, S, V column-major cols×cols), unsorted.
fn jacobi_tall(rows: usize, cols: usize, mut work: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut v = vec![0.0; cols * cols];
    for j in 0..cols {
        v[j * cols + j] = 1.0;
    }
    let mut norms: Vec<f64> = (0..cols)
        .map(|j| dot(&work[j * rows..(j + 1) * rows], &work[j * rows..(j + 1) * rows]))
        .collect();

    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..cols {
            for j in i + 1..cols {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&work[i * rows..(i + 1) * rows], &work[j * rows..(j + 1) * rows]);
                if gamma.abs() <= TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, rows, i, j, c, s);
                rotate(&mut v, cols, i, j, c, s);
                let wi = &work[i * rows..(i + 1) * rows];
                norms[i] = dot(wi, wi);
                let wj = &work[j * rows..(j + 1) * rows];
                norms[j] = dot(wj, wj);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let sigma: Vec<f64> = norms.iter().map(|n| n.sqrt()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let floor = smax * f64::EPSILON * rows as f64;
    let mut degenerate = Vec::new();
    for j in 0..cols {
        let col = &mut work[j * rows..(j + 1) * rows];
        if sigma[j] > floor && sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            col.iter_mut().for_each(|x| *x *= inv);
        } else {
            col.fill(0.0);
            degenerate.push(j);
        }
    }
    complete_basis(rows, &mut work, &degenerate);
    Ok((work, sigma, v))
}

/// Fills the listed (zeroed) columns with unit vectors orthogonal to all
/// other columns, by Gram-Schmidt over the standard basis.
fn complete_basis(rows: usize, cols: &mut [f64], targets: &[usize]) {
    let ncols = cols.len() / rows;
    let mut filled: Vec<bool> = (0..ncols).map(|j| !targets.contains(&j)).collect();
    let mut candidate = 0usize;
    for &t in targets {
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for j in 0..ncols {
                    if !filled[j] {
                        continue;
                    }
                    let q = &cols[j * rows..(j + 1) * rows];
                    let proj = dot(q, &e);
                    for (x, &qv) in e.iter_mut().zip(q) {
                        *x -= proj * qv;
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-6 {
                for (dst, x) in cols[t * rows..(t + 1) * rows].iter_mut().zip(&e) {
                    *dst = x / n;
                }
                filled[t] = true;
                break;
            }
        }
    }
}

/// Thin SVD of a p×q matrix, k = min(p, q).
pub fn svd(m: &DenseTensor) -> Result<SvdResult> {
    if m.ndim() != 2 {
        return Err(Error::DimensionMismatch {
            op: "svd",
            left: m.shape().to_vec(),
            right: vec![],
        });
    }
    if m.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (p, q) = (m.shape()[0], m.shape()[1]);
    let a = m.data();
    // Column-major storage of A (if tall) or of Aᵀ (if wide) is the same
    // buffer family: column j of Aᵀ is row j of A.
    let (rows, cols, work) = if p >= q {
        let mut w = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                w[j * p + i] = a[i * q + j];
            }
        }
        (p, q, w)
    } else {
        (q, p, a.to_vec())
    };
    let (left, sigma, right) = jacobi_tall(rows, cols, work)?;
    let k = cols;
    // For the wide case the roles of the factors swap.
    let (ucm, vcm, urows, vrows) = if p >= q {
        (left, right, p, q)
    } else {
        (right, left, p, q)
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));

    let mut u = vec![0.0; urows * k];
    let mut v = vec![0.0; vrows * k];
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let ucol = &ucm[src * urows..(src + 1) * urows];
        let vcol = &vcm[src * vrows..(src + 1) * vrows];
        let mut pivot = 0usize;
        for (i, x) in ucol.iter().enumerate() {
            if x.abs() > ucol[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if ucol[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..urows {
            u[i * k + dst] = sign * ucol[i];
        }
        for i in 0..vrows {
            v[i * k + dst] = sign * vcol[i];
        }
        s.push(sigma[src]);
    }
    Ok(SvdResult {
        u: DenseTensor::new(vec![urows, k], u)?,
        s,
        v: DenseTensor::new(vec![vrows, k], v)?,
    })
}
