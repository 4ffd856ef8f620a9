//! Raw slice kernels shared by the graph's forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Real;

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn mm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn mm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *cv += acc;
        }
    }
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn mm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = size + 2 * pad;
        if padded < k || stride == 0 {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one image `[c,h,w]` into `[c·k·k, ho·wo]` patch columns.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ch * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Fold patch-column gradients back onto an image gradient (accumulating).
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        dx[(ch * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

/// Permute axes of a row-major buffer: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Real>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5).collect(); // [3,4]
        let mut c = vec![0.0; 8];
        mm_nn(&a, &b, &mut c, 2, 3, 4);
        let (_, bt) = permute(&b, &[3, 4], &[1, 0]);
        let mut c2 = vec![0.0; 8];
        mm_nt(&a, &bt, &mut c2, 2, 3, 4);
        let (_, at) = permute(&a, &[2, 3], &[1, 0]);
        let mut c3 = vec![0.0; 8];
        mm_tn(&at, &b, &mut c3, 2, 3, 4);
        assert_eq!(c, c2);
        assert_eq!(c, c3);
    }

    #[test]
    fn permute_round_trip() {
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let axes = [2, 0, 1];
        let (s, p) = permute(&data, &[2, 3, 4], &axes);
        assert_eq!(s, vec![4, 2, 3]);
        let (s2, back) = permute(&p, &s, &inverse_axes(&axes));
        assert_eq!(s2, vec![2, 3, 4]);
        assert_eq!(back, data);
    }
}
