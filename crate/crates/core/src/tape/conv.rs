//! Direct 2-D convolution lowered to im2col + a blocked matmul.
//!
//! The matmul keeps four output rows live per pass so the inner loop
//! vectorizes; summation order is fixed, so results are deterministic.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// C[m,n] += A[m,k] * B[k,n], all row-major.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let rows = &mut c[i * n..(i + 4) * n];
        let (r0, rest) = rows.split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = br[j];
                r0[j] += a0 * bv;
                r1[j] += a1 * bv;
                r2[j] += a2 * bv;
                r3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += av * br[j];
            }
        }
        i += 1;
    }
}

pub(crate) fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

pub(crate) fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one sample into a `[C*k*k, OH*OW]` patch matrix (zero padding).
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [T],
) {
    let oh = out_extent(h, k, stride, pad);
    let ow = out_extent(w, k, stride, pad);
    debug_assert_eq!(col.len(), c * k * k * oh * ow);
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for v in drow.iter_mut() {
                            *v = T::ZERO;
                        }
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold a `[C*k*k, OH*OW]` cotangent matrix back onto one input sample.
fn col2im<T: Scalar>(
    dcol: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
) {
    let oh = out_extent(h, k, stride, pad);
    let ow = out_extent(w, k, stride, pad);
    let mut row = 0;
    for ci in 0..c {
        let xc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &dcol[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// True when the patch matrix is just the input sample itself.
#[inline]
fn is_identity_unfold(k: usize, stride: usize, pad: usize) -> bool {
    k == 1 && stride == 1 && pad == 0
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let [n, cin, h, wid] = x.shape();
    let [cout, _, k, _] = w.shape();
    let oh = out_extent(h, k, stride, pad);
    let ow = out_extent(wid, k, stride, pad);
    let ck = cin * k * k;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let mut col = if is_identity_unfold(k, stride, pad) {
        Vec::new()
    } else {
        vec![T::ZERO; ck * oh * ow]
    };
    for ni in 0..n {
        let sample = {
            let start = ni * cin * h * wid;
            &x.data()[start..start + cin * h * wid]
        };
        let patches: &[T] = if is_identity_unfold(k, stride, pad) {
            sample
        } else {
            im2col(sample, cin, h, wid, k, stride, pad, &mut col);
            &col
        };
        let dst = {
            let start = ni * cout * oh * ow;
            &mut out.data_mut()[start..start + cout * oh * ow]
        };
        matmul(w.data(), patches, dst, cout, ck, oh * ow);
        if let Some(bias) = b {
            for co in 0..cout {
                let bv = bias.data()[co];
                for v in dst[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients w.r.t. input, weight, and bias; any of them can be skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let [n, cin, h, wid] = x.shape();
    let [cout, _, k, _] = w.shape();
    let oh = out_extent(h, k, stride, pad);
    let ow = out_extent(wid, k, stride, pad);
    let ck = cin * k * k;
    let ohw = oh * ow;

    let mut dx = need_x.then(|| vec![T::ZERO; x.numel()]);
    let mut dw = need_w.then(|| vec![T::ZERO; w.numel()]);
    let mut db = need_b.then(|| vec![T::ZERO; cout]);

    let identity = is_identity_unfold(k, stride, pad);
    let mut col = if identity { Vec::new() } else { vec![T::ZERO; ck * ohw] };
    let mut col_t = if need_w { vec![T::ZERO; ck * ohw] } else { Vec::new() };
    let mut w_t = if need_x { vec![T::ZERO; w.numel()] } else { Vec::new() };
    if need_x {
        transpose(w.data(), cout, ck, &mut w_t);
    }
    let mut dcol = if need_x && !identity {
        vec![T::ZERO; ck * ohw]
    } else {
        Vec::new()
    };

    for ni in 0..n {
        let dy_n = &dy[ni * cout * ohw..(ni + 1) * cout * ohw];
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cout {
                let mut acc = T::ZERO;
                for &g in &dy_n[co * ohw..(co + 1) * ohw] {
                    acc += g;
                }
                db[co] += acc;
            }
        }
        let sample = {
            let start = ni * cin * h * wid;
            &x.data()[start..start + cin * h * wid]
        };
        if let Some(dw) = dw.as_deref_mut() {
            let patches: &[T] = if identity {
                sample
            } else {
                im2col(sample, cin, h, wid, k, stride, pad, &mut col);
                &col
            };
            transpose(patches, ck, ohw, &mut col_t);
            matmul(dy_n, &col_t, dw, cout, ohw, ck);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[ni * cin * h * wid..(ni + 1) * cin * h * wid];
            if identity {
                matmul(&w_t, dy_n, dxn, ck, cout, ohw);
            } else {
                for v in dcol.iter_mut() {
                    *v = T::ZERO;
                }
                matmul(&w_t, dy_n, &mut dcol, ck, cout, ohw);
                col2im(&dcol, cin, h, wid, k, stride, pad, dxn);
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Six-nested-loop convolution, written independently of the im2col
    /// path above.
    pub(crate) fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&[f64]>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let [n, cin, h, wid] = x.shape();
        let [cout, _, k, _] = w.shape();
        let oh = out_extent(h, k, stride, pad);
        let ow = out_extent(wid, k, stride, pad);
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map(|bb| bb[co]).unwrap_or(0.0);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wid as isize {
                                        continue;
                                    }
                                    acc += x.at(ni, ci, iy as usize, ix as usize)
                                        * w.at(co, ci, ky, kx);
                                }
                            }
                        }
                        out.set(ni, co, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.range(-1.0, 1.0))
    }

    #[test]
    fn matmul_small_case() {
        // 2x3 * 3x2, computed by hand
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        matmul(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_blocked_matches_naive() {
        let (m, k, n) = (9, 7, 13);
        let mut rng = Rng::new(1);
        let a: Vec<f64> = (0..m * k).map(|_| rng.range(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.range(-1.0, 1.0)).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_naive_loop_on_shape_grid() {
        for &k in &[1usize, 3] {
            for &stride in &[1usize, 2] {
                for h in 4..=9usize {
                    for w in 4..=9usize {
                        let pad = k / 2;
                        let x = random([2, 3, h, w], (k * 1000 + stride * 100 + h * 10 + w) as u64);
                        let wt = random([4, 3, k, k], 99);
                        let got = forward(&x, &wt, None, stride, pad);
                        let want = conv_oracle(&x, &wt, None, stride, pad);
                        assert!(
                            got.max_abs_diff(&want) < 1e-10,
                            "k={k} s={stride} h={h} w={w}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn random_case_matches_oracle_within_tolerance() {
        let x = random([2, 3, 8, 8], 5);
        let w = random([4, 3, 3, 3], 6);
        let got = forward(&x, &w, None, 1, 1);
        let want = conv_oracle(&x, &w, None, 1, 1);
        assert!(got.max_abs_diff(&want) < 1e-5);
    }
}
