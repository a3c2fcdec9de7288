//! Dense inner loops shared by the differentiable ops. Everything here works
//! on raw row-major slices; shapes are validated by the callers.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::numel;
use super::{Real, Tensor};

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (arow, crow) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&aip, brow) in arow.iter().zip(b.chunks_exact(n)) {
            // post-ReLU activations are sparse
            if aip == T::zero() {
                continue;
            }
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], g: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&aip, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            if aip == T::zero() {
                continue;
            }
            for (oj, &gj) in orow.iter_mut().zip(grow) {
                *oj += aip * gj;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, g: &[T], b: &[T], out: &mut [T]) {
    let bt = transpose(k, n, b);
    gemm_nn(m, n, k, g, &bt, out);
}

pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds an `[h, w, cin]` image into `[ho*wo, kh*kw*cin]` patches ordered
/// `(ky, kx, c)`, zero outside the padded border.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.ho * g.wo * patch];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.kw + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut x = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.kw + kx) * g.cin;
                    for (d, &s) in x[dst..dst + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// Trailing-axis aligned broadcast of two shapes (numpy rules).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `input` when viewed with shape `out` (0 on broadcast axes).
fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..input.len()).rev() {
        strides[i + offset] = if input[i] == 1 { 0 } else { acc };
        acc *= input[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast
/// output in row-major order.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    let na = numel(a);
    let nb = numel(b);
    if na == n && nb == n {
        (0..n).for_each(|i| f(i, i, i));
        return;
    }
    let suffix = |s: &[usize]| s.len() <= out.len() && out[out.len() - s.len()..] == *s;
    if na == n && suffix(b) {
        (0..n).for_each(|i| f(i, i, i % nb));
        return;
    }
    if nb == n && suffix(a) {
        (0..n).for_each(|i| f(i, i % na, i));
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of broadcast shape back down to `shape`.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = vec![T::zero(); numel(shape)];
    let g = grad.data();
    for_each_broadcast(grad.shape(), grad.shape(), shape, |i, _, j| out[j] += g[i]);
    Tensor::from_parts(shape.to_vec(), out)
}

/// Numerically careful sum: accumulates in f64.
pub(crate) fn sum_f64<T: Real>(xs: impl Iterator<Item = T>) -> f64 {
    xs.map(|x| x.to_f64()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[4]), None);
    }

    #[test]
    fn general_broadcast_indices_match_brute_force() {
        let out = [2, 3, 4];
        let a = [2, 1, 4];
        let b = [3, 1];
        let mut seen = Vec::new();
        for_each_broadcast(&out, &a, &b, |i, ia, ib| seen.push((i, ia, ib)));
        let mut expect = Vec::new();
        for x in 0..2 {
            for y in 0..3 {
                for z in 0..4 {
                    expect.push((x * 12 + y * 4 + z, x * 4 + z, y));
                }
            }
        }
        assert_eq!(seen, expect);
    }

    #[test]
    fn gemm_variants_agree_with_naive_products() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let e: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - e).abs() < 1e-12);
            }
        }
        let mut at_c = vec![0.0; k * n];
        gemm_tn(m, k, n, &a, &c, &mut at_c);
        for p in 0..k {
            for j in 0..n {
                let e: f64 = (0..m).map(|i| a[i * k + p] * c[i * n + j]).sum();
                assert!((at_c[p * n + j] - e).abs() < 1e-12);
            }
        }
        let mut c_bt = vec![0.0; m * k];
        gemm_nt(m, n, k, &c, &b, &mut c_bt);
        for i in 0..m {
            for p in 0..k {
                let e: f64 = (0..n).map(|j| c[i * n + j] * b[p * n + j]).sum();
                assert!((c_bt[i * k + p] - e).abs() < 1e-12);
            }
        }
    }
}
