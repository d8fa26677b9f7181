//! Small dense matrix kernels backing conv2d.
//!
//! `matmul_acc` accumulates every output element strictly in ascending
//! inner-index order, starting from the value already in `c`. That makes
//! conv2d bit-identical to a plain nested-loop cross-correlation.

use crate::exec;

const MR: usize = 6;
const NR: usize = 16;
/// Rows per parallel task; each column strip of `b` is reused across them.
const ROW_GROUP: usize = 4 * MR;
/// Lanes of the dot-product reduction.
const LANES: usize = 8;
/// Rows of `a` sharing each load of `b` in [`matmul_nt_acc`].
const NT_ROWS: usize = 8;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    exec::for_each_chunk_mut(c, ROW_GROUP * n, |blk, rows| {
        row_group(a, b, rows, blk * ROW_GROUP, k, n);
    });
}

/// Sequential form of [`matmul_acc`]; produces identical bits.
pub fn matmul_acc_seq(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    exec::for_each_chunk_mut_seq(c, ROW_GROUP * n, |blk, rows| {
        row_group(a, b, rows, blk * ROW_GROUP, k, n);
    });
}

/// Walks column strips outermost. Each strip of `b` is packed into a
/// contiguous `k×NR` panel (rows of `b` are often a multiple of 4 KiB
/// apart and would alias in L1) and reused by every row block.
fn row_group(a: &[f64], b: &[f64], rows: &mut [f64], row0: usize, k: usize, n: usize) {
    let nrows = rows.len() / n;
    let mut panel = vec![0.0f64; k * NR];
    let mut j = 0;
    while j < n {
        let width = NR.min(n - j);
        for (dst, brow) in panel.chunks_exact_mut(NR).zip(b.chunks_exact(n)) {
            dst[..width].copy_from_slice(&brow[j..j + width]);
        }
        for (blk, c) in rows.chunks_mut(MR * n).enumerate() {
            let a = &a[(row0 + blk * MR) * k..];
            let c = &mut c[j..];
            match ((nrows - blk * MR).min(MR), width == NR) {
                (6, true) => strip::<6>(a, &panel, c, NR, k, n),
                (6, false) => strip::<6>(a, &panel, c, width, k, n),
                (5, _) => strip::<5>(a, &panel, c, width, k, n),
                (4, _) => strip::<4>(a, &panel, c, width, k, n),
                (3, _) => strip::<3>(a, &panel, c, width, k, n),
                (2, _) => strip::<2>(a, &panel, c, width, k, n),
                _ => strip::<1>(a, &panel, c, width, k, n),
            }
        }
        j += width;
    }
}

/// `R` rows × `width` (≤ NR) columns; `c` starts at the strip's first column.
#[inline(always)]
fn strip<const R: usize>(a: &[f64], panel: &[f64], c: &mut [f64], width: usize, k: usize, n: usize) {
    let arows: [&[f64]; R] = std::array::from_fn(|r| &a[r * k..(r + 1) * k]);
    let mut acc = [[0.0f64; NR]; R];
    for r in 0..R {
        acc[r][..width].copy_from_slice(&c[r * n..r * n + width]);
    }
    for (l, bv) in panel.chunks_exact(NR).enumerate() {
        let bv: &[f64; NR] = bv.try_into().unwrap();
        for r in 0..R {
            let av = arows[r][l];
            for t in 0..NR {
                acc[r][t] += av * bv[t];
            }
        }
    }
    for r in 0..R {
        c[r * n..r * n + width].copy_from_slice(&acc[r][..width]);
    }
}

/// `c[m×k] += a[m×p] · b[k×p]ᵀ`. Each element is `dot(a_i, b_j)` bit for bit.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, k: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * k);
    if m == 0 || k == 0 {
        return;
    }
    exec::for_each_chunk_mut(c, NT_ROWS * k, |blk, rows| {
        let a = &a[blk * NT_ROWS * p..];
        match rows.len() / k {
            8 => dot_rows::<8>(a, b, rows, p, k),
            7 => dot_rows::<7>(a, b, rows, p, k),
            6 => dot_rows::<6>(a, b, rows, p, k),
            5 => dot_rows::<5>(a, b, rows, p, k),
            4 => dot_rows::<4>(a, b, rows, p, k),
            3 => dot_rows::<3>(a, b, rows, p, k),
            2 => dot_rows::<2>(a, b, rows, p, k),
            _ => dot_rows::<1>(a, b, rows, p, k),
        }
    });
}

#[inline(always)]
fn dot_rows<const R: usize>(a: &[f64], b: &[f64], c: &mut [f64], p: usize, k: usize) {
    let full = p / LANES * LANES;
    let arows: [&[f64]; R] = std::array::from_fn(|r| &a[r * p..(r + 1) * p]);
    for (j, bj) in b.chunks_exact(p).enumerate() {
        let mut lanes = [[0.0f64; LANES]; R];
        for (s, bv) in bj[..full].chunks_exact(LANES).enumerate() {
            let o = s * LANES;
            for r in 0..R {
                let av = &arows[r][o..o + LANES];
                for t in 0..LANES {
                    lanes[r][t] += av[t] * bv[t];
                }
            }
        }
        for r in 0..R {
            let mut s = lanes[r].iter().sum::<f64>();
            for (x, y) in arows[r][full..].iter().zip(&bj[full..]) {
                s += x * y;
            }
            c[r * k + j] += s;
        }
    }
}

/// Dot product with a fixed lane-wise reduction order.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut lanes = [0.0f64; LANES];
    let xc = x.chunks_exact(LANES);
    let yc = y.chunks_exact(LANES);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for t in 0..LANES {
            lanes[t] += xs[t] * ys[t];
        }
    }
    let mut s = lanes.iter().sum::<f64>();
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}
