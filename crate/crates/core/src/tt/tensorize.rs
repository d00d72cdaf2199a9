//! Reshape/permute recipes turning layer weights into TT-ready tensors.
//!
//! An M×N matrix with `M = m_1⋯m_d`, `N = n_1⋯n_d` is viewed as the tensor
//! `[m_1..m_d, n_1..n_d]` (row and column indices split multi-radix, first
//! factor most significant), permuted to `[m_1, n_1, .., m_d, n_d]` and fused
//! pairwise into `[m_1 n_1, .., m_d n_d]`. Within a fused mode the output
//! factor varies slower.
//!
//! A K×K×M×N kernel is first flattened to the matrix
//! `W[i, (k1, k2, j)] = w[k1, k2, i, j]` and then tensorized with an extra
//! leading factor pair `(1, K·K)`, giving `[K·K, m_1 n_1, .., m_d n_d]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorizationMap {
    /// Output factors `m_1..m_d`, product M.
    pub out_factors: Vec<usize>,
    /// Input factors `n_1..n_d`, product N.
    pub in_factors: Vec<usize>,
    /// Spatial kernel size K for convolutions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
}

impl TensorizationMap {
    pub fn fc(out_factors: Vec<usize>, in_factors: Vec<usize>) -> Result<Self> {
        let map = Self {
            out_factors,
            in_factors,
            kernel: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn conv(kernel: usize, out_factors: Vec<usize>, in_factors: Vec<usize>) -> Result<Self> {
        let map = Self {
            out_factors,
            in_factors,
            kernel: Some(kernel),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_factors.is_empty() || self.out_factors.len() != self.in_factors.len() {
            return Err(Error::Tensorization(format!(
                "factor lists must be non-empty and equally long ({:?} vs {:?})",
                self.out_factors, self.in_factors
            )));
        }
        if self.out_factors.iter().chain(&self.in_factors).any(|&f| f == 0) || self.kernel == Some(0) {
            return Err(Error::Tensorization("factors must be >= 1".into()));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.out_factors.iter().product()
    }

    pub fn in_dim(&self) -> usize {
        self.in_factors.iter().product()
    }

    /// Output factors of the TT-matrix view, including the `1` for the kernel mode.
    pub fn tt_out_factors(&self) -> Vec<usize> {
        match self.kernel {
            Some(_) => std::iter::once(1).chain(self.out_factors.iter().copied()).collect(),
            None => self.out_factors.clone(),
        }
    }

    /// Input factors of the TT-matrix view, including `K·K` for the kernel mode.
    pub fn tt_in_factors(&self) -> Vec<usize> {
        match self.kernel {
            Some(k) => std::iter::once(k * k).chain(self.in_factors.iter().copied()).collect(),
            None => self.in_factors.clone(),
        }
    }

    /// Extents of the tensorized weight, one per TT core.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.tt_out_factors()
            .iter()
            .zip(self.tt_in_factors())
            .map(|(m, n)| m * n)
            .collect()
    }

    /// Axis order taking `[m_1..m_d, n_1..n_d]` to `[m_1, n_1, .., m_d, n_d]`.
    pub fn interleave_order(d: usize) -> Vec<usize> {
        (0..d).flat_map(|k| [k, d + k]).collect()
    }

    pub fn dense_params(&self) -> usize {
        let k2 = self.kernel.map_or(1, |k| k * k);
        k2 * self.out_dim() * self.in_dim()
    }
}

fn as_isize(v: &[usize]) -> Vec<isize> {
    v.iter().map(|&x| x as isize).collect()
}

/// Tensorizes an M×N matrix against explicit factor lists.
pub fn tensorize_matrix(w: &DenseTensor, out_factors: &[usize], in_factors: &[usize]) -> Result<DenseTensor> {
    let (m, n): (usize, usize) = (out_factors.iter().product(), in_factors.iter().product());
    if w.shape() != [m, n] || out_factors.len() != in_factors.len() {
        return Err(Error::Tensorization(format!(
            "matrix {:?} does not factor as {out_factors:?} x {in_factors:?}",
            w.shape()
        )));
    }
    let d = out_factors.len();
    let split: Vec<usize> = out_factors.iter().chain(in_factors).copied().collect();
    let fused: Vec<usize> = out_factors.iter().zip(in_factors).map(|(a, b)| a * b).collect();
    w.reshape(&as_isize(&split))?
        .permute(&TensorizationMap::interleave_order(d))?
        .into_shape(&fused)
}

/// Inverse of [`tensorize_matrix`].
pub fn detensorize_matrix(t: &DenseTensor, out_factors: &[usize], in_factors: &[usize]) -> Result<DenseTensor> {
    let d = out_factors.len();
    let fused: Vec<usize> = out_factors.iter().zip(in_factors).map(|(a, b)| a * b).collect();
    if t.shape() != fused.as_slice() || in_factors.len() != d {
        return Err(Error::Tensorization(format!(
            "tensor {:?} does not match fused modes {fused:?}",
            t.shape()
        )));
    }
    let pairs: Vec<usize> = out_factors.iter().zip(in_factors).flat_map(|(&a, &b)| [a, b]).collect();
    let order: Vec<usize> = (0..d).map(|k| 2 * k).chain((0..d).map(|k| 2 * k + 1)).collect();
    let (m, n): (usize, usize) = (out_factors.iter().product(), in_factors.iter().product());
    t.reshape(&as_isize(&pairs))?.permute(&order)?.into_shape(&[m, n])
}

pub fn tensorize_fc(w: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    if map.kernel.is_some() {
        return Err(Error::Tensorization("conv map used for an fc weight".into()));
    }
    tensorize_matrix(w, &map.out_factors, &map.in_factors)
}

pub fn detensorize_fc(t: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    if map.kernel.is_some() {
        return Err(Error::Tensorization("conv map used for an fc weight".into()));
    }
    detensorize_matrix(t, &map.out_factors, &map.in_factors)
}

/// K×K×M×N kernel to its M×(K·K·N) matrix view.
pub(crate) fn conv_kernel_to_matrix(w: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    let k = map
        .kernel
        .ok_or_else(|| Error::Tensorization("fc map used for a conv kernel".into()))?;
    let (m, n) = (map.out_dim(), map.in_dim());
    if w.shape() != [k, k, m, n] {
        return Err(Error::Tensorization(format!(
            "kernel {:?} does not match [{k}, {k}, {m}, {n}]",
            w.shape()
        )));
    }
    w.reshape(&[(k * k) as isize, m as isize, n as isize])?
        .permute(&[1, 0, 2])?
        .into_shape(&[m, k * k * n])
}

pub(crate) fn conv_matrix_to_kernel(w: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    let k = map
        .kernel
        .ok_or_else(|| Error::Tensorization("fc map used for a conv kernel".into()))?;
    let (m, n) = (map.out_dim(), map.in_dim());
    if w.shape() != [m, k * k * n] {
        return Err(Error::Tensorization(format!(
            "matrix {:?} does not match [{m}, {}]",
            w.shape(),
            k * k * n
        )));
    }
    w.reshape(&[m as isize, (k * k) as isize, n as isize])?
        .permute(&[1, 0, 2])?
        .into_shape(&[k, k, m, n])
}

pub fn tensorize_conv(w: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    let mat = conv_kernel_to_matrix(w, map)?;
    tensorize_matrix(&mat, &map.tt_out_factors(), &map.tt_in_factors())
}

pub fn detensorize_conv(t: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    if map.kernel.is_none() {
        return Err(Error::Tensorization("fc map used for a conv kernel".into()));
    }
    let mat = detensorize_matrix(t, &map.tt_out_factors(), &map.tt_in_factors())?;
    conv_matrix_to_kernel(&mat, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn trivial_map() {
        let map = TensorizationMap::fc(vec![1, 1, 1], vec![1, 1, 1]).unwrap();
        let w = DenseTensor::new(vec![1, 1], vec![4.5]).unwrap();
        let t = tensorize_fc(&w, &map).unwrap();
        assert_eq!(t.shape(), &[1, 1, 1]);
        assert_eq!(t.data(), &[4.5]);
    }

    #[test]
    fn fc_exhaustive_index_oracle() {
        let map = TensorizationMap::fc(vec![2, 2], vec![2, 2]).unwrap();
        let w = random(&[4, 4], 1);
        let t = tensorize_fc(&w, &map).unwrap();
        assert_eq!(t.shape(), &[4, 4]);
        for i1 in 0..2 {
            for i2 in 0..2 {
                for j1 in 0..2 {
                    for j2 in 0..2 {
                        let row = i1 * 2 + i2;
                        let col = j1 * 2 + j2;
                        let mode1 = i1 * 2 + j1;
                        let mode2 = i2 * 2 + j2;
                        assert_eq!(t.get(&[mode1, mode2]).unwrap(), w.get(&[row, col]).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn conv_exhaustive_index_oracle() {
        let map = TensorizationMap::conv(3, vec![2, 2], vec![2, 2]).unwrap();
        let w = random(&[3, 3, 4, 4], 2);
        let t = tensorize_conv(&w, &map).unwrap();
        assert_eq!(t.shape(), &[9, 4, 4]);
        for k1 in 0..3 {
            for k2 in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        let (i1, i2, j1, j2) = (i / 2, i % 2, j / 2, j % 2);
                        let want = w.get(&[k1, k2, i, j]).unwrap();
                        let got = t.get(&[k1 * 3 + k2, i1 * 2 + j1, i2 * 2 + j2]).unwrap();
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn one_by_one_conv_matches_fc() {
        let conv = TensorizationMap::conv(1, vec![2, 3], vec![3, 2]).unwrap();
        let fc = TensorizationMap::fc(vec![2, 3], vec![3, 2]).unwrap();
        let w = random(&[1, 1, 6, 6], 3);
        let as_mat = w.reshape(&[6, 6]).unwrap();
        let tc = tensorize_conv(&w, &conv).unwrap();
        let tf = tensorize_fc(&as_mat, &fc).unwrap();
        assert_eq!(tc.data(), tf.data());
        assert_eq!(tc.shape(), &[1, 6, 6]);
    }

    #[test]
    fn mismatched_factors() {
        let map = TensorizationMap::fc(vec![2, 2], vec![2, 3]).unwrap();
        let w = DenseTensor::zeros(&[4, 4]).unwrap();
        assert!(matches!(tensorize_fc(&w, &map), Err(Error::Tensorization(_))));
        assert!(TensorizationMap::fc(vec![2], vec![2, 2]).is_err());
        assert!(TensorizationMap::fc(vec![0], vec![2]).is_err());
        let conv = TensorizationMap::conv(3, vec![2], vec![2]).unwrap();
        assert!(tensorize_conv(&DenseTensor::zeros(&[2, 2, 2, 2]).unwrap(), &conv).is_err());
        assert!(tensorize_fc(&w, &conv).is_err());
    }

    fn factors() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..4).prop_flat_map(|d| {
            (
                proptest::collection::vec(1usize..4, d),
                proptest::collection::vec(1usize..4, d),
            )
        })
    }

    proptest! {
        #[test]
        fn fc_round_trip_is_bitwise((m, n) in factors(), seed in any::<u64>()) {
            let map = TensorizationMap::fc(m, n).unwrap();
            let w = random(&[map.out_dim(), map.in_dim()], seed);
            let t = tensorize_fc(&w, &map).unwrap();
            prop_assert_eq!(t.shape().to_vec(), map.mode_sizes());
            prop_assert_eq!(detensorize_fc(&t, &map).unwrap(), w);
        }

        #[test]
        fn conv_round_trip_is_bitwise((m, n) in factors(), k in 1usize..4, seed in any::<u64>()) {
            let map = TensorizationMap::conv(k, m, n).unwrap();
            let w = random(&[k, k, map.out_dim(), map.in_dim()], seed);
            let t = tensorize_conv(&w, &map).unwrap();
            prop_assert_eq!(t.shape().to_vec(), map.mode_sizes());
            prop_assert_eq!(detensorize_conv(&t, &map).unwrap(), w);
        }
    }
}
