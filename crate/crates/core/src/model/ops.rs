//! Dense kernels on row-major slices.

use std::iter::Sum;

use num_traits::Float;

pub trait Scalar: Float + Default + Sum + Send + Sync + std::fmt::Debug + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`.
pub fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + aip * bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`.
pub fn gemm_bt_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = c[i * n + j] + dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`.
pub fn gemm_at_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + api * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] = acc[l] + a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Output size of a 3x3 convolution with padding 1.
pub fn conv_out(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Unfolds `x[c][h][w]` into `cols[c*9][oh*ow]` for a 3x3 kernel, padding 1.
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    cols: &mut Vec<T>,
) -> (usize, usize) {
    let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
    let p = oh * ow;
    cols.clear();
    cols.resize(c * 9 * p, T::zero());
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * p..(ch * 9 + ky * 3 + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (oh, ow)
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `dx[c][h][w]`.
pub fn col2im_acc<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    dx: &mut [T],
) {
    let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
    let p = oh * ow;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * p..(ch * 9 + ky * 3 + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Softmax in double precision.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let mut rng = seeded(1);
        let (m, k, n) = (5, 11, 7);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expect = naive(m, k, n, &a, &b);
        let close = |x: &[f64]| x.iter().zip(&expect).all(|(p, q)| (p - q).abs() < 1e-12);

        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, &a, &b, &mut c);
        assert!(close(&c));
        let mut c = vec![0.0; m * n];
        gemm_bt_acc(m, k, n, &a, &transpose(k, n, &b), &mut c);
        assert!(close(&c));
        let mut c = vec![0.0; m * n];
        gemm_at_acc(m, k, n, &transpose(m, k, &a), &b, &mut c);
        assert!(close(&c));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for every stride.
        let mut rng = seeded(2);
        let (c, h, w) = (2, 5, 6);
        for stride in 1..=3 {
            let x: Vec<f64> = (0..c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let mut cols = Vec::new();
            let (oh, ow) = im2col(&x, c, h, w, stride, &mut cols);
            assert_eq!(cols.len(), c * 9 * oh * ow);
            let y: Vec<f64> = (0..cols.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let mut dx = vec![0.0; x.len()];
            col2im_acc(&y, c, h, w, stride, &mut dx);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out(64, 2), 32);
        assert_eq!(conv_out(217, 2), 109);
        assert_eq!(conv_out(1, 2), 1);
        assert_eq!(conv_out(5, 1), 5);
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let q = softmax(&[1001.0, 1002.0, 1003.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
