//! Tensor-train format: cores, reconstruction, the TT-SVD projection and
//! parameter accounting.
//!
//! A d-order tensor with extents `n_1..n_d` is stored as d cores, core `k`
//! shaped `[r_{k-1}, n_k, r_k]` with `r_0 = r_d = 1`. Entry `(i_1..i_d)` is the
//! product of the slice matrices `G_1[:, i_1, :] ⋯ G_d[:, i_d, :]`.

mod io;
mod tensorize;

pub(crate) use io::{read_f64s, read_u32, write_f64s, write_u32};
pub use io::{read_tt, write_tt, TT_MAGIC};
pub(crate) use tensorize::{conv_kernel_to_matrix, conv_matrix_to_kernel};
pub use tensorize::{
    detensorize_conv, detensorize_fc, detensorize_matrix, tensorize_conv, tensorize_fc, tensorize_matrix,
    TensorizationMap,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svd::svd;
use crate::tensor::{gemm, DenseTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TtTensor {
    cores: Vec<DenseTensor>,
}

impl TtTensor {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidRanks("a tt tensor needs at least one core".into()));
        }
        if let Some(bad) = cores.iter().position(|c| c.ndim() != 3) {
            return Err(Error::InvalidRanks(format!(
                "core {bad} has shape {:?}, expected 3 axes",
                cores[bad].shape()
            )));
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[2] != 1 {
            return Err(Error::InvalidRanks("boundary ranks must be 1".into()));
        }
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].shape()[2] != pair[1].shape()[0] {
                return Err(Error::InvalidRanks(format!(
                    "cores {k} and {} disagree on the shared rank ({} vs {})",
                    k + 1,
                    pair[0].shape()[2],
                    pair[1].shape()[0]
                )));
            }
        }
        Ok(Self { cores })
    }

    /// Random cores with entries uniform in `[-scale, scale]`.
    pub fn random(mode_sizes: &[usize], ranks: &RankSpec, scale: f64, rng: &mut impl rand::Rng) -> Result<Self> {
        let ranks = ranks.clamp_to(mode_sizes)?;
        let r = ranks.as_slice();
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| DenseTensor::from_fn(&[r[k], n, r[k + 1]], |_| rng.random_range(-scale..=scale)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    /// Mutable access to core data. Shapes cannot change through this.
    pub fn cores_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.cores
    }

    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.cores.iter().map(|c| c.shape()[2]))
            .collect()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    /// A single entry, as a product of core slices.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        let modes = self.mode_sizes();
        if index.len() != modes.len() || index.iter().zip(&modes).any(|(i, n)| i >= n) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: modes,
            });
        }
        let mut row = vec![1.0];
        for (core, &i) in self.cores.iter().zip(index) {
            let (n, rr) = (core.shape()[1], core.shape()[2]);
            let data = core.data();
            let mut next = vec![0.0; rr];
            for (a, &x) in row.iter().enumerate() {
                let slice = &data[(a * n + i) * rr..(a * n + i + 1) * rr];
                for (y, &g) in next.iter_mut().zip(slice) {
                    *y += x * g;
                }
            }
            row = next;
        }
        Ok(row[0])
    }

    /// Dense tensor with shape `[n_1..n_d]`, contracting cores left to right.
    pub fn reconstruct(&self) -> DenseTensor {
        let mut acc = self.cores[0].data().to_vec();
        let mut rows = self.cores[0].shape()[1];
        for core in &self.cores[1..] {
            let (rl, n, rr) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let mut next = vec![0.0; rows * n * rr];
            gemm(rows, rl, n * rr, &acc, core.data(), &mut next);
            acc = next;
            rows *= n;
        }
        DenseTensor::new(self.mode_sizes(), acc).expect("core shapes are validated")
    }
}

/// Target TT-ranks `[r_0, .., r_d]` with `r_0 = r_d = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RankSpec(Vec<usize>);

impl RankSpec {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.len() < 2 {
            return Err(Error::InvalidRanks(format!("{ranks:?}: need at least two entries")));
        }
        if ranks[0] != 1 || ranks[ranks.len() - 1] != 1 {
            return Err(Error::InvalidRanks(format!("{ranks:?}: boundary ranks must be 1")));
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidRanks(format!("{ranks:?}: ranks must be >= 1")));
        }
        Ok(Self(ranks))
    }

    /// `[1, r, .., r, 1]` for a d-order tensor.
    pub fn uniform(order: usize, rank: usize) -> Result<Self> {
        let mut ranks = vec![rank; order + 1];
        ranks[0] = 1;
        ranks[order] = 1;
        Self::new(ranks)
    }

    /// Ranks at which TT-SVD is lossless for these extents.
    pub fn full(mode_sizes: &[usize]) -> Result<Self> {
        Self::uniform(mode_sizes.len(), usize::MAX)?.clamp_to(mode_sizes)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Realized ranks: each `r_k` is cut down to what the unfolding at that
    /// position can hold, `min(r*_k, r_{k-1} n_k, n_{k+1} ⋯ n_d)`.
    pub fn clamp_to(&self, mode_sizes: &[usize]) -> Result<RankSpec> {
        let d = mode_sizes.len();
        if self.order() != d {
            return Err(Error::InvalidRanks(format!(
                "{} ranks given for an order-{d} tensor",
                self.0.len()
            )));
        }
        let mut out = vec![1usize; d + 1];
        for k in 1..d {
            let right: usize = mode_sizes[k..]
                .iter()
                .try_fold(1usize, |acc, &n| acc.checked_mul(n))
                .unwrap_or(usize::MAX);
            let left = out[k - 1].saturating_mul(mode_sizes[k - 1]);
            out[k] = self.0[k].min(left).min(right);
        }
        Ok(RankSpec(out))
    }
}

impl TryFrom<Vec<usize>> for RankSpec {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        RankSpec::new(v)
    }
}

impl From<RankSpec> for Vec<usize> {
    fn from(r: RankSpec) -> Self {
        r.0
    }
}

/// TT-SVD: sequential reshape, SVD and truncation, carrying `S·Vᵀ` forward.
pub fn tt_svd(a: &DenseTensor, r_star: &RankSpec) -> Result<TtTensor> {
    let modes = a.shape().to_vec();
    let ranks = r_star.clamp_to(&modes)?;
    let ranks = ranks.as_slice();
    let d = modes.len();
    let mut cores = Vec::with_capacity(d);
    let mut remainder = a.clone();
    let mut r_prev = 1usize;
    for k in 0..d - 1 {
        let rows = r_prev * modes[k];
        let cols = remainder.len() / rows;
        let unfolding = remainder.into_shape(&[rows, cols])?;
        let dec = svd(&unfolding)?;
        let keep = ranks[k + 1];
        let kfull = dec.rank();
        let u = dec.u.data();
        let mut core = vec![0.0; rows * keep];
        for i in 0..rows {
            core[i * keep..(i + 1) * keep].copy_from_slice(&u[i * kfull..i * kfull + keep]);
        }
        cores.push(DenseTensor::new(vec![r_prev, modes[k], keep], core)?);
        let v = dec.v.data();
        let mut sv = vec![0.0; keep * cols];
        for j in 0..keep {
            let s = dec.s[j];
            for c in 0..cols {
                sv[j * cols + c] = s * v[c * kfull + j];
            }
        }
        remainder = DenseTensor::new(vec![keep, cols], sv)?;
        r_prev = keep;
    }
    cores.push(remainder.into_shape(&[r_prev, modes[d - 1], 1])?);
    TtTensor::new(cores)
}

/// Projection onto tensors of TT-rank at most `r_star`:
/// `reconstruct(tt_svd(a, r_star))`.
pub fn project(a: &DenseTensor, r_star: &RankSpec) -> Result<DenseTensor> {
    Ok(tt_svd(a, r_star)?.reconstruct())
}

pub fn param_count(t: &TtTensor) -> usize {
    t.param_count()
}

/// Parameter count of a TT tensor with these extents and (already clamped) ranks.
pub fn param_count_for(mode_sizes: &[usize], ranks: &RankSpec) -> usize {
    let r = ranks.as_slice();
    mode_sizes.iter().enumerate().map(|(k, &n)| r[k] * n * r[k + 1]).sum()
}

pub fn compression_ratio(dense_params: usize, tt_params: usize) -> f64 {
    dense_params as f64 / tt_params as f64
}
