//! Packed matrix multiply.
//!
//! Each output entry is accumulated as `c + a_0 b_0 + a_1 b_1 + ...` in
//! ascending inner index with separate multiply and add, so the result is
//! bitwise the same as the textbook triple loop regardless of blocking or of
//! which instruction set the kernel was compiled for.

const MR: usize = 4;
const NR: usize = 8;

#[derive(Clone, Copy)]
pub(crate) enum Layout {
    /// Stored as written: `A` is m×k, `B` is k×n.
    Normal,
    /// Stored transposed: `A` is k×m, `B` is n×k.
    Transposed,
}

/// `A(i, p)` packed into row blocks of `MR`, inner index outermost per block.
fn pack_a(m: usize, k: usize, a: &[f64], layout: Layout) -> Vec<f64> {
    let blocks = m.div_ceil(MR);
    let mut out = vec![0.0; blocks * k * MR];
    for ib in 0..blocks {
        let base = ib * k * MR;
        let rows = MR.min(m - ib * MR);
        match layout {
            Layout::Normal => {
                for ii in 0..rows {
                    let row = &a[(ib * MR + ii) * k..(ib * MR + ii + 1) * k];
                    for (p, &v) in row.iter().enumerate() {
                        out[base + p * MR + ii] = v;
                    }
                }
            }
            Layout::Transposed => {
                for p in 0..k {
                    let src = &a[p * m + ib * MR..p * m + ib * MR + rows];
                    out[base + p * MR..base + p * MR + rows].copy_from_slice(src);
                }
            }
        }
    }
    out
}

/// `B(p, j)` packed into column panels of `NR`.
fn pack_b(k: usize, n: usize, b: &[f64], layout: Layout) -> Vec<f64> {
    let panels = n.div_ceil(NR);
    let mut out = vec![0.0; panels * k * NR];
    for jb in 0..panels {
        let base = jb * k * NR;
        let cols = NR.min(n - jb * NR);
        match layout {
            Layout::Normal => {
                for p in 0..k {
                    let src = &b[p * n + jb * NR..p * n + jb * NR + cols];
                    out[base + p * NR..base + p * NR + cols].copy_from_slice(src);
                }
            }
            Layout::Transposed => {
                for jj in 0..cols {
                    let row = &b[(jb * NR + jj) * k..(jb * NR + jj + 1) * k];
                    for (p, &v) in row.iter().enumerate() {
                        out[base + p * NR + jj] = v;
                    }
                }
            }
        }
    }
    out
}

#[inline(always)]
fn blocks(m: usize, k: usize, n: usize, ap: &[f64], bp: &[f64], c: &mut [f64], accumulate: bool) {
    for jb in 0..n.div_ceil(NR) {
        let cols = NR.min(n - jb * NR);
        let bpanel = &bp[jb * k * NR..(jb + 1) * k * NR];
        for ib in 0..m.div_ceil(MR) {
            let rows = MR.min(m - ib * MR);
            let ablock = &ap[ib * k * MR..(ib + 1) * k * MR];
            let mut acc = [[0.0f64; NR]; MR];
            if accumulate {
                for ii in 0..rows {
                    let off = (ib * MR + ii) * n + jb * NR;
                    acc[ii][..cols].copy_from_slice(&c[off..off + cols]);
                }
            }
            for (av, bv) in ablock.chunks_exact(MR).zip(bpanel.chunks_exact(NR)) {
                for ii in 0..MR {
                    let x = av[ii];
                    for jj in 0..NR {
                        acc[ii][jj] += x * bv[jj];
                    }
                }
            }
            for ii in 0..rows {
                let off = (ib * MR + ii) * n + jb * NR;
                c[off..off + cols].copy_from_slice(&acc[ii][..cols]);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn blocks_avx(m: usize, k: usize, n: usize, ap: &[f64], bp: &[f64], c: &mut [f64], accumulate: bool) {
    blocks(m, k, n, ap, bp, c, accumulate)
}

fn run_blocks(m: usize, k: usize, n: usize, ap: &[f64], bp: &[f64], c: &mut [f64], accumulate: bool) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX, checked just above.
        unsafe { blocks_avx(m, k, n, ap, bp, c, accumulate) };
        return;
    }
    blocks(m, k, n, ap, bp, c, accumulate)
}

/// `C (+)= op(A) · op(B)` with `C` m×n row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_packed(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let ap = pack_a(m, k, a, a_layout);
    let bp = pack_b(k, n, b, b_layout);
    run_blocks(m, k, n, &ap, &bp, c, accumulate);
}
