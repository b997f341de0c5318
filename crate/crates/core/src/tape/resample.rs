//! Spatial resampling kernels: nearest upsampling, pixel shuffle,
//! per-location channel softmax, and content-aware reassembly.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn upsample_nearest2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for oy in 0..2 * h {
                let sy = oy / 2;
                for ox in 0..2 * w {
                    dst[oy * 2 * w + ox] = src[sy * w + ox / 2];
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest2_backward<T: Scalar>(
    x_shape: [usize; 4],
    dy: &[T],
    dx: &mut [T],
) {
    let [n, c, h, w] = x_shape;
    for ni in 0..n {
        for ci in 0..c {
            let dst_base = (ni * c + ci) * h * w;
            let src_base = (ni * c + ci) * 4 * h * w;
            for oy in 0..2 * h {
                let sy = oy / 2;
                for ox in 0..2 * w {
                    dx[dst_base + sy * w + ox / 2] += dy[src_base + oy * 2 * w + ox];
                }
            }
        }
    }
}

pub(crate) fn pixel_shuffle2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c4, h, w] = x.shape();
    let c = c4 / 4;
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = x.plane(ni, ci * 4 + dy * 2 + dx);
                    let dst = out.plane_mut(ni, ci);
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(2 * y + dy) * 2 * w + 2 * xx + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn pixel_shuffle2_backward<T: Scalar>(x_shape: [usize; 4], dy: &[T], dx: &mut [T]) {
    let [n, c4, h, w] = x_shape;
    let c = c4 / 4;
    let hw = h * w;
    for ni in 0..n {
        for ci in 0..c {
            for d_y in 0..2 {
                for d_x in 0..2 {
                    let dst_base = (ni * c4 + ci * 4 + d_y * 2 + d_x) * hw;
                    let src_base = (ni * c + ci) * 4 * hw;
                    for y in 0..h {
                        for xx in 0..w {
                            dx[dst_base + y * w + xx] +=
                                dy[src_base + (2 * y + d_y) * 2 * w + 2 * xx + d_x];
                        }
                    }
                }
            }
        }
    }
}

/// Softmax over the channel axis at each (n, y, x), with the usual
/// max-shift for stability.
pub(crate) fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for j in 0..hw {
            let mut mx = x.data()[(ni * c) * hw + j];
            for ci in 1..c {
                let v = x.data()[(ni * c + ci) * hw + j];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = T::ZERO;
            for ci in 0..c {
                let e = (x.data()[(ni * c + ci) * hw + j] - mx).exp();
                out.data_mut()[(ni * c + ci) * hw + j] = e;
                denom += e;
            }
            let inv = T::ONE / denom;
            for ci in 0..c {
                out.data_mut()[(ni * c + ci) * hw + j] *= inv;
            }
        }
    }
    out
}

pub(crate) fn softmax_channels_backward<T: Scalar>(out: &Tensor<T>, dy: &[T], dx: &mut [T]) {
    let [n, c, h, w] = out.shape();
    let hw = h * w;
    for ni in 0..n {
        for j in 0..hw {
            let mut dot = T::ZERO;
            for ci in 0..c {
                let idx = (ni * c + ci) * hw + j;
                dot += dy[idx] * out.data()[idx];
            }
            for ci in 0..c {
                let idx = (ni * c + ci) * hw + j;
                dx[idx] += out.data()[idx] * (dy[idx] - dot);
            }
        }
    }
}

/// For tap j of a k x k window with radius r, the output columns whose
/// source column stays in bounds: ox/2 + dx in [0, w).
#[inline]
fn valid_ox_range(dx: isize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if dx < 0 { (-dx as usize) * 2 } else { 0 };
    let hi_src = w as isize - dx; // exclusive bound on ox/2 + 1
    let hi = if hi_src <= 0 {
        0
    } else {
        (2 * hi_src as usize).min(ow)
    };
    (lo.min(hi), hi)
}

/// out[n,c,oy,ox] = sum over the k_up x k_up window centered at the source
/// cell (oy/2, ox/2) of kernels[n,j,oy,ox] * x[n,c,sy+dy,sx+dx]; positions
/// outside the input read as zero. One fused pass over the output plane
/// per (channel, tap).
pub(crate) fn carafe_reassemble<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    k_up: usize,
) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let r = (k_up / 2) as isize;
    let kk = k_up * k_up;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci).to_vec();
            let op = out.plane_mut(ni, ci);
            for j in 0..kk {
                let dy = (j / k_up) as isize - r;
                let dx = (j % k_up) as isize - r;
                let kp = kernels.plane(ni, j);
                let (lo, hi) = valid_ox_range(dx, w, ow);
                for oy in 0..oh {
                    let iy = (oy / 2) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xp[iy as usize * w..(iy as usize + 1) * w];
                    let orow = &mut op[oy * ow..(oy + 1) * ow];
                    let krow = &kp[oy * ow..(oy + 1) * ow];
                    for ox in lo..hi {
                        let ix = ((ox / 2) as isize + dx) as usize;
                        orow[ox] += krow[ox] * xrow[ix];
                    }
                }
            }
        }
    }
    out
}

type Pair<T> = (Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn carafe_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &[T],
    k_up: usize,
    need_x: bool,
    need_k: bool,
) -> Pair<T> {
    let [n, c, h, w] = x.shape();
    let r = (k_up / 2) as isize;
    let kk = k_up * k_up;
    let (oh, ow) = (2 * h, 2 * w);
    let ohw = oh * ow;
    let hw = h * w;
    let mut dx = need_x.then(|| vec![T::ZERO; x.numel()]);
    let mut dk = need_k.then(|| vec![T::ZERO; kernels.numel()]);
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci);
            let gplane = &dy[(ni * c + ci) * ohw..(ni * c + ci + 1) * ohw];
            for j in 0..kk {
                let dyy = (j / k_up) as isize - r;
                let dxx = (j % k_up) as isize - r;
                let (lo, hi) = valid_ox_range(dxx, w, ow);
                let kbase = (ni * kk + j) * ohw;
                for oy in 0..oh {
                    let iy = (oy / 2) as isize + dyy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let grow = &gplane[oy * ow..(oy + 1) * ow];
                    match (dx.as_deref_mut(), dk.as_deref_mut()) {
                        (Some(dx), Some(dk)) => {
                            let kfull = &kernels.data()[kbase..kbase + ohw];
                            let krow = &kfull[oy * ow..(oy + 1) * ow];
                            let dxrow = &mut dx[(ni * c + ci) * hw + iy * w..];
                            let dkrow = &mut dk[kbase + oy * ow..kbase + (oy + 1) * ow];
                            let xrow = &xp[iy * w..(iy + 1) * w];
                            for ox in lo..hi {
                                let ix = ((ox / 2) as isize + dxx) as usize;
                                dxrow[ix] += krow[ox] * grow[ox];
                                dkrow[ox] += grow[ox] * xrow[ix];
                            }
                        }
                        (Some(dx), None) => {
                            let kfull = &kernels.data()[kbase..kbase + ohw];
                            let krow = &kfull[oy * ow..(oy + 1) * ow];
                            let dxrow = &mut dx[(ni * c + ci) * hw + iy * w..];
                            for ox in lo..hi {
                                let ix = ((ox / 2) as isize + dxx) as usize;
                                dxrow[ix] += krow[ox] * grow[ox];
                            }
                        }
                        (None, Some(dk)) => {
                            let dkrow = &mut dk[kbase + oy * ow..kbase + (oy + 1) * ow];
                            let xrow = &xp[iy * w..(iy + 1) * w];
                            for ox in lo..hi {
                                let ix = ((ox / 2) as isize + dxx) as usize;
                                dkrow[ox] += grow[ox] * xrow[ix];
                            }
                        }
                        (None, None) => {}
                    }
                }
            }
        }
    }
    (dx, dk)
}
