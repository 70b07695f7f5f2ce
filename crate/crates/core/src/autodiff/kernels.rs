//! Raw kernels shared by forward and backward passes. Layouts are row-major,
//! images are NCHW.

use alloc::vec::Vec;

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom { cin, h, w, k, stride, pad, ho: (h + 2 * pad - k) / stride + 1, wo: (w + 2 * pad - k) / stride + 1 })
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies in
/// `0..w`, as a half-open range.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = if g.w + g.pad > kx { (g.w + g.pad - kx - 1) / g.stride + 1 } else { 0 };
    (lo.min(g.wo), hi.min(g.wo).max(lo.min(g.wo)))
}

/// One image `[cin, h, w]` to columns `[cin*k*k, ho*wo]`, rows `ld` apart.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize) {
    let n_out = g.col_cols();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ld..row * ld + n_out];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if lo < hi {
                        let start = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (d, s) in drow[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Layout for stride-1 convolutions over a group of `m` images. Each channel
/// row holds the `m` zero-bordered planes back to back plus a zero tail, so a
/// kernel tap `(ky, kx)` is a constant column offset into the row.
#[derive(Debug, Clone, Copy)]
pub struct Shifted {
    pub wp: usize,
    pub plane: usize,
    pub cols: usize,
    pub row: usize,
}

impl Shifted {
    pub fn new(g: &ConvGeom, m: usize) -> Self {
        let (hp, wp) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
        let plane = hp * wp;
        Shifted { wp, plane, cols: m * plane, row: m * plane + (g.k - 1) * (wp + 1) }
    }

    pub fn offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }

    /// Wide column of output pixel `(i, y, x)`.
    pub fn col(&self, i: usize, y: usize, x: usize) -> usize {
        i * self.plane + y * self.wp + x
    }
}

/// Whether the shifted layout applies and beats explicit columns.
pub fn use_shifted(g: &ConvGeom) -> bool {
    g.stride == 1 && (g.cin >= 8 || g.k == 1)
}

/// Images `[m, cin, h, w]` to the shifted layout `[cin, row]`.
pub fn shifted_pack<T: Real>(x: &[T], g: &ConvGeom, s: &Shifted, m: usize) -> Vec<T> {
    let mut out = alloc::vec![T::zero(); g.cin * s.row];
    for i in 0..m {
        for c in 0..g.cin {
            let src = &x[(i * g.cin + c) * g.h * g.w..];
            let dst = &mut out[c * s.row..];
            for y in 0..g.h {
                let d = s.col(i, y + g.pad, g.pad);
                dst[d..d + g.w].copy_from_slice(&src[y * g.w..(y + 1) * g.w]);
            }
        }
    }
    out
}

/// Adds the interior of a shifted-layout gradient back to `dx [m, cin, h, w]`.
pub fn shifted_unpack_add<T: Real>(src: &[T], g: &ConvGeom, s: &Shifted, m: usize, dx: &mut [T]) {
    for i in 0..m {
        for c in 0..g.cin {
            let row = &src[c * s.row..];
            let dst = &mut dx[(i * g.cin + c) * g.h * g.w..];
            for y in 0..g.h {
                let o = s.col(i, y + g.pad, g.pad);
                for (d, v) in dst[y * g.w..(y + 1) * g.w].iter_mut().zip(&row[o..o + g.w]) {
                    *d += *v;
                }
            }
        }
    }
}

/// Images per convolution GEMM so that each product has roughly
/// `GROUP_COLS` columns.
pub const GROUP_COLS: usize = 1024;

pub fn conv_group(cols_n: usize, n: usize) -> usize {
    (GROUP_COLS / cols_n.max(1)).clamp(1, n.max(1))
}

/// Columns of a whole batch side by side: `[cin*k*k, n*ho*wo]`.
pub fn im2col_batch<T: Real>(x: &[T], g: &ConvGeom, n: usize) -> Vec<T> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let ld = n * cols_n;
    let in_sz = g.cin * g.h * g.w;
    let mut cols = alloc::vec![T::zero(); rows * ld];
    for i in 0..n {
        im2col(&x[i * in_sz..(i + 1) * in_sz], g, &mut cols[i * cols_n..], ld);
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T], ld: usize) {
    let n_out = g.col_cols();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ld..row * ld + n_out];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.stride + kx - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, s) in dst[start..start + hi - lo].iter_mut().zip(srow) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in dst[start..].iter_mut().step_by(g.stride).zip(srow) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Causal attention for one (batch, head) slice. `q`, `k`, `v` are `[t, d]`.
/// Row `i` only ever reads rows `0..=i`, so outputs are bitwise independent
/// of later positions. Returns the lower-triangular probabilities `[t, t]`.
pub fn causal_attention_fwd<T: Real>(q: &[T], k: &[T], v: &[T], t: usize, d: usize, out: &mut [T], probs: &mut [T]) {
    let scale = T::one() / T::c(d as f64).sqrt();
    for i in 0..t {
        let qi = &q[i * d..(i + 1) * d];
        let p = &mut probs[i * t..(i + 1) * t];
        let mut max = T::neg_infinity();
        for j in 0..=i {
            let kj = &k[j * d..(j + 1) * d];
            let s = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<T>() * scale;
            p[j] = s;
            if s > max {
                max = s;
            }
        }
        let mut z = T::zero();
        for pj in p.iter_mut().take(i + 1) {
            *pj = (*pj - max).exp();
            z += *pj;
        }
        for pj in p.iter_mut().take(i + 1) {
            *pj = *pj / z;
        }
        for pj in p.iter_mut().skip(i + 1) {
            *pj = T::zero();
        }
        let oi = &mut out[i * d..(i + 1) * d];
        oi.iter_mut().for_each(|o| *o = T::zero());
        for j in 0..=i {
            let pj = p[j];
            for (o, vv) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += pj * *vv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn causal_attention_bwd<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    t: usize,
    d: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let scale = T::one() / T::c(d as f64).sqrt();
    let mut dp = alloc::vec![T::zero(); t];
    for i in 0..t {
        let doi = &dout[i * d..(i + 1) * d];
        let p = &probs[i * t..(i + 1) * t];
        let mut dot = T::zero();
        for j in 0..=i {
            let vj = &v[j * d..(j + 1) * d];
            dp[j] = doi.iter().zip(vj).map(|(a, b)| *a * *b).sum::<T>();
            dot += dp[j] * p[j];
            for (g, o) in dv[j * d..(j + 1) * d].iter_mut().zip(doi) {
                *g += p[j] * *o;
            }
        }
        for j in 0..=i {
            let ds = p[j] * (dp[j] - dot) * scale;
            for c in 0..d {
                dq[i * d + c] += ds * k[j * d + c];
                dk[j * d + c] += ds * q[i * d + c];
            }
        }
    }
}

/// Flattened strides for a row-major shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = alloc::vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `src` (with `shape`) through axis permutation `perm` into `dst`.
pub fn permute<T: Real>(src: &[T], shape: &[usize], perm: &[usize], dst: &mut [T]) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut idx = alloc::vec![0usize; rank];
    let mut offset = 0usize;
    for d in dst.iter_mut() {
        *d = src[offset];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}
