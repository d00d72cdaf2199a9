//! Batched forward/backward kernels for the four weight layer kinds.
//!
//! Activations are flat row-major buffers with the batch index outermost.
//! Feature maps are laid out `[batch, width, height, channels]`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_acc, gemm_nt, gemm_tn_acc, swap_middle, DenseTensor};
use crate::tt::{conv_kernel_to_matrix, TensorizationMap, TtTensor};

/// Intermediates kept by a TT-matrix forward pass, one per core.
#[derive(Debug, Clone, Default)]
pub(crate) struct TtCache {
    /// Core `k`'s input, laid out `[P, Q, n_k, r_k]`.
    inputs: Vec<Vec<f64>>,
    rows: usize,
}

/// Geometry of a TT-matrix with output factors `m` and input factors `n`.
pub(crate) struct TtGeometry<'a> {
    pub out_factors: &'a [usize],
    pub in_factors: &'a [usize],
    pub ranks: Vec<usize>,
}

impl<'a> TtGeometry<'a> {
    pub fn new(cores: &TtTensor, out_factors: &'a [usize], in_factors: &'a [usize]) -> Result<Self> {
        let modes = cores.mode_sizes();
        let fused: Vec<usize> = out_factors.iter().zip(in_factors).map(|(m, n)| m * n).collect();
        if modes != fused {
            return Err(Error::Tensorization(format!(
                "cores have modes {modes:?}, factors give {fused:?}"
            )));
        }
        Ok(Self {
            out_factors,
            in_factors,
            ranks: cores.ranks(),
        })
    }

    fn in_dim(&self) -> usize {
        self.in_factors.iter().product()
    }

    fn out_dim(&self) -> usize {
        self.out_factors.iter().product()
    }

    /// (P, Q) block sizes around core `k` for `rows` inputs.
    fn blocks(&self, k: usize, rows: usize) -> (usize, usize) {
        let p = rows * self.in_factors[..k].iter().product::<usize>();
        let q = self.out_factors[k + 1..].iter().product::<usize>();
        (p, q)
    }
}

/// `[P, Q, a, m] -> [P, m, Q, a]`
fn pqam_to_pmqa(p: usize, q: usize, a: usize, m: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p * q * a * m];
    for pi in 0..p {
        for qi in 0..q {
            for ai in 0..a {
                let s = ((pi * q + qi) * a + ai) * m;
                for mi in 0..m {
                    out[((pi * m + mi) * q + qi) * a + ai] = src[s + mi];
                }
            }
        }
    }
    out
}

/// `[P, m, Q, a] -> [P, Q, a, m]`
fn pmqa_to_pqam(p: usize, q: usize, a: usize, m: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p * q * a * m];
    for pi in 0..p {
        for mi in 0..m {
            for qi in 0..q {
                let s = ((pi * m + mi) * q + qi) * a;
                for ai in 0..a {
                    out[((pi * q + qi) * a + ai) * m + mi] = src[s + ai];
                }
            }
        }
    }
    out
}

/// `y = W x` for every row of `x`, where `W` is the TT-matrix held by
/// `cores`. Cores are contracted from the last to the first; the dense `W`
/// is never formed.
pub(crate) fn tt_matrix_forward(cores: &TtTensor, geo: &TtGeometry, x: &[f64], rows: usize) -> (Vec<f64>, TtCache) {
    let d = cores.order();
    debug_assert_eq!(x.len(), rows * geo.in_dim());
    let mut t = x.to_vec();
    let mut inputs = vec![Vec::new(); d];
    for k in (0..d).rev() {
        let (p, q) = geo.blocks(k, rows);
        let (nk, mk) = (geo.in_factors[k], geo.out_factors[k]);
        let (rl, rr) = (geo.ranks[k], geo.ranks[k + 1]);
        let permuted = swap_middle(p, nk, q, rr, &t);
        let mut r = vec![0.0; p * q * rl * mk];
        gemm_nt(p * q, nk * rr, rl * mk, &permuted, cores.cores()[k].data(), &mut r);
        t = pqam_to_pmqa(p, q, rl, mk, &r);
        inputs[k] = permuted;
    }
    debug_assert_eq!(t.len(), rows * geo.out_dim());
    (t, TtCache { inputs, rows })
}

/// Accumulates core gradients into `core_grads` and returns the gradient
/// with respect to the input if `want_input` is set.
pub(crate) fn tt_matrix_backward(
    cores: &TtTensor,
    geo: &TtGeometry,
    cache: &TtCache,
    dy: &[f64],
    core_grads: &mut [DenseTensor],
    want_input: bool,
) -> Option<Vec<f64>> {
    let d = cores.order();
    let rows = cache.rows;
    let mut dt = dy.to_vec();
    for k in 0..d {
        let (p, q) = geo.blocks(k, rows);
        let (nk, mk) = (geo.in_factors[k], geo.out_factors[k]);
        let (rl, rr) = (geo.ranks[k], geo.ranks[k + 1]);
        let dr = pmqa_to_pqam(p, q, rl, mk, &dt);
        gemm_tn_acc(rl * mk, p * q, nk * rr, &dr, &cache.inputs[k], core_grads[k].data_mut());
        if k + 1 < d || want_input {
            let mut dm = vec![0.0; p * q * nk * rr];
            gemm(p * q, rl * mk, nk * rr, &dr, cores.cores()[k].data(), &mut dm);
            dt = swap_middle(p, q, nk, rr, &dm);
        }
    }
    want_input.then_some(dt)
}

/// Patches of a `[rows, width, height, channels]` batch, one row per output
/// position, each patch ordered `(k1, k2, channel)`.
pub(crate) fn im2col(x: &[f64], rows: usize, width: usize, height: usize, channels: usize, k: usize) -> Vec<f64> {
    let (ow, oh) = (width - k + 1, height - k + 1);
    let patch = k * k * channels;
    let mut out = vec![0.0; rows * ow * oh * patch];
    for b in 0..rows {
        for w in 0..ow {
            for h in 0..oh {
                let dst = ((b * ow + w) * oh + h) * patch;
                for k1 in 0..k {
                    let src = ((b * width + w + k1) * height + h) * channels;
                    let d = dst + k1 * k * channels;
                    out[d..d + k * channels].copy_from_slice(&x[src..src + k * channels]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(cols: &[f64], rows: usize, width: usize, height: usize, channels: usize, k: usize) -> Vec<f64> {
    let (ow, oh) = (width - k + 1, height - k + 1);
    let patch = k * k * channels;
    let mut out = vec![0.0; rows * width * height * channels];
    for b in 0..rows {
        for w in 0..ow {
            for h in 0..oh {
                let src = ((b * ow + w) * oh + h) * patch;
                for k1 in 0..k {
                    let dst = ((b * width + w + k1) * height + h) * channels;
                    let s = src + k1 * k * channels;
                    for (o, &g) in out[dst..dst + k * channels].iter_mut().zip(&cols[s..s + k * channels]) {
                        *o += g;
                    }
                }
            }
        }
    }
    out
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

fn expect_shape(t: &DenseTensor, shape: &[usize], op: &'static str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::DimensionMismatch {
            op,
            left: t.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    Ok(())
}

/// `W x + b` for a single vector.
pub fn dense_fc_forward(w: &DenseTensor, x: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if w.ndim() != 2 {
        return Err(Error::DimensionMismatch {
            op: "dense_fc_forward",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    expect_shape(x, &[n], "dense_fc_forward")?;
    expect_shape(b, &[m], "dense_fc_forward")?;
    let mut y = vec![0.0; m];
    gemm_nt(1, n, m, x.data(), w.data(), &mut y);
    add_bias(&mut y, b.data());
    DenseTensor::new(vec![m], y)
}

/// TT-FC forward for a single vector.
pub fn tt_fc_forward(
    cores: &TtTensor,
    x: &DenseTensor,
    map: &TensorizationMap,
    b: &DenseTensor,
) -> Result<DenseTensor> {
    if map.kernel.is_some() {
        return Err(Error::Tensorization("conv map used for a tt-fc layer".into()));
    }
    let geo = TtGeometry::new(cores, &map.out_factors, &map.in_factors)?;
    expect_shape(x, &[map.in_dim()], "tt_fc_forward")?;
    expect_shape(b, &[map.out_dim()], "tt_fc_forward")?;
    let (mut y, _) = tt_matrix_forward(cores, &geo, x.data(), 1);
    add_bias(&mut y, b.data());
    DenseTensor::new(vec![map.out_dim()], y)
}

fn conv_input_dims(w: &DenseTensor, x: &DenseTensor) -> Result<(usize, usize, usize, usize, usize)> {
    if w.ndim() != 4 || x.ndim() != 3 || w.shape()[0] != w.shape()[1] || w.shape()[3] != x.shape()[2] {
        return Err(Error::DimensionMismatch {
            op: "conv_forward",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let k = w.shape()[0];
    let (width, height) = (x.shape()[0], x.shape()[1]);
    if k > width || k > height {
        return Err(Error::DimensionMismatch {
            op: "conv_forward: kernel larger than input",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    Ok((k, width, height, w.shape()[2], w.shape()[3]))
}

/// Valid cross-correlation of a `W×H×N` input with a `K×K×M×N` kernel:
/// `y[w, h, i] = Σ_{k1, k2, j} x[w + k1, h + k2, j] · kernel[k1, k2, i, j]`.
pub fn dense_conv_forward(w: &DenseTensor, x: &DenseTensor) -> Result<DenseTensor> {
    let (k, width, height, m, n) = conv_input_dims(w, x)?;
    let map = TensorizationMap::conv(k, vec![m], vec![n])?;
    let mat = conv_kernel_to_matrix(w, &map)?;
    let cols = im2col(x.data(), 1, width, height, n, k);
    let positions = (width - k + 1) * (height - k + 1);
    let mut y = vec![0.0; positions * m];
    gemm_nt(positions, k * k * n, m, &cols, mat.data(), &mut y);
    DenseTensor::new(vec![width - k + 1, height - k + 1, m], y)
}

/// TT-CONV forward for a single `W×H×N` input, without reconstructing the kernel.
pub fn tt_conv_forward(cores: &TtTensor, x: &DenseTensor, map: &TensorizationMap) -> Result<DenseTensor> {
    let k = map
        .kernel
        .ok_or_else(|| Error::Tensorization("fc map used for a tt-conv layer".into()))?;
    let (m, n) = (map.out_dim(), map.in_dim());
    if x.ndim() != 3 || x.shape()[2] != n || x.shape()[0] < k || x.shape()[1] < k {
        return Err(Error::DimensionMismatch {
            op: "tt_conv_forward",
            left: vec![k, k, m, n],
            right: x.shape().to_vec(),
        });
    }
    let (out_f, in_f) = (map.tt_out_factors(), map.tt_in_factors());
    let geo = TtGeometry::new(cores, &out_f, &in_f)?;
    let (width, height) = (x.shape()[0], x.shape()[1]);
    let cols = im2col(x.data(), 1, width, height, n, k);
    let positions = (width - k + 1) * (height - k + 1);
    let (y, _) = tt_matrix_forward(cores, &geo, &cols, positions);
    DenseTensor::new(vec![width - k + 1, height - k + 1, m], y)
}

/// Dense matrix that the fc layer multiplies by: `[rows, inputs] -> [rows, outputs]`.
pub(crate) fn fc_forward_batch(weight: &[f64], bias: &[f64], x: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let m = bias.len();
    let mut y = vec![0.0; rows * m];
    gemm_nt(rows, n, m, x, weight, &mut y);
    add_bias(&mut y, bias);
    y
}

/// Weight gradient `dyᵀ x` (accumulated) and optionally `dy W`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fc_backward_batch(
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    rows: usize,
    m: usize,
    n: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    gemm_tn_acc(m, rows, n, dy, x, dweight);
    for row in dy.chunks_exact(m) {
        for (g, &v) in dbias.iter_mut().zip(row) {
            *g += v;
        }
    }
    want_input.then(|| {
        let mut dx = vec![0.0; rows * n];
        gemm_acc(rows, m, n, dy, weight, &mut dx);
        dx
    })
}

pub(crate) fn add_bias_rows(y: &mut [f64], b: &[f64]) {
    add_bias(y, b)
}
