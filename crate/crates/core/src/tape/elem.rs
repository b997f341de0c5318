//! Elementwise, pooling, and channel-layout kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
pub(crate) fn axpy<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    out.grad = None;
    axpy(out.data_mut(), b.data());
    out
}

pub(crate) fn mul_gate<T: Scalar>(gate: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = gate.at(ni, ci, 0, 0);
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = g * s;
            }
        }
    }
    out
}

type Pair<T> = (Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn mul_gate_backward<T: Scalar>(
    gate: &Tensor<T>,
    x: &Tensor<T>,
    dy: &[T],
    need_gate: bool,
    need_x: bool,
) -> Pair<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut dgate = need_gate.then(|| vec![T::ZERO; gate.numel()]);
    let mut dx = need_x.then(|| vec![T::ZERO; x.numel()]);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            if let Some(dg) = dgate.as_deref_mut() {
                let mut acc = T::ZERO;
                let src = x.plane(ni, ci);
                for (j, &xv) in src.iter().enumerate() {
                    acc += dy[base + j] * xv;
                }
                dg[ni * c + ci] += acc;
            }
            if let Some(dx) = dx.as_deref_mut() {
                let g = gate.at(ni, ci, 0, 0);
                for j in 0..hw {
                    dx[base + j] += g * dy[base + j];
                }
            }
        }
    }
    (dgate, dx)
}

pub(crate) fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = T::ZERO;
            for &v in x.plane(ni, ci) {
                acc += v;
            }
            out.set(ni, ci, 0, 0, acc * inv);
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(
    x_shape: [usize; 4],
    dy: &[T],
    dx: &mut [T],
) {
    let [n, c, h, w] = x_shape;
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    for ni in 0..n {
        for ci in 0..c {
            let g = dy[ni * c + ci] * inv;
            let base = (ni * c + ci) * hw;
            for v in dx[base..base + hw].iter_mut() {
                *v += g;
            }
        }
    }
}

pub(crate) fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, ca, h, w] = a.shape();
    let cb = b.shape()[1];
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for ni in 0..n {
        for ci in 0..ca {
            out.plane_mut(ni, ci).copy_from_slice(a.plane(ni, ci));
        }
        for ci in 0..cb {
            out.plane_mut(ni, ca + ci).copy_from_slice(b.plane(ni, ci));
        }
    }
    out
}

/// Route the cotangent slice of channels `[start, start+len)` to one
/// concat operand.
pub(crate) fn concat_backward_part<T: Scalar>(
    out_shape: [usize; 4],
    dy: &[T],
    start: usize,
    len: usize,
    dst: &mut [T],
) {
    let [n, c, h, w] = out_shape;
    let hw = h * w;
    for ni in 0..n {
        for ci in 0..len {
            let src_base = (ni * c + start + ci) * hw;
            let dst_base = (ni * len + ci) * hw;
            axpy(
                &mut dst[dst_base..dst_base + hw],
                &dy[src_base..src_base + hw],
            );
        }
    }
}

pub(crate) fn narrow_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let [n, _, h, w] = x.shape();
    let mut out = Tensor::zeros([n, len, h, w]);
    for ni in 0..n {
        for ci in 0..len {
            out.plane_mut(ni, ci).copy_from_slice(x.plane(ni, start + ci));
        }
    }
    out
}

pub(crate) fn narrow_backward<T: Scalar>(
    x_shape: [usize; 4],
    len: usize,
    start: usize,
    dy: &[T],
    dx: &mut [T],
) {
    let [n, c, h, w] = x_shape;
    let hw = h * w;
    for ni in 0..n {
        for ci in 0..len {
            let dst_base = (ni * c + start + ci) * hw;
            let src_base = (ni * len + ci) * hw;
            axpy(
                &mut dx[dst_base..dst_base + hw],
                &dy[src_base..src_base + hw],
            );
        }
    }
}
