//! Batch normalization forward/backward.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tape::Mode;
use crate::tensor::Tensor;

type BnForward<T> = (Tensor<T>, Vec<T>, Vec<T>, bool);

/// Returns (output, mean, inv_std, batch_stats). In train mode the running
/// buffers are updated in place with momentum; the running variance uses
/// the unbiased estimate when the reduction count allows it.
pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    momentum: T,
    eps: T,
    mode: Mode,
) -> CoreResult<BnForward<T>> {
    let [n, c, h, w] = x.shape();
    let m = n * h * w;
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if m == 0 {
                return Err(CoreError::EmptySpatial { op: "batch_norm" });
            }
            let mut mean = vec![T::ZERO; c];
            let mut var = vec![T::ZERO; c];
            let inv_m = T::from_f64(1.0 / m as f64);
            for ci in 0..c {
                let mut acc = T::ZERO;
                for ni in 0..n {
                    for &v in x.plane(ni, ci) {
                        acc += v;
                    }
                }
                mean[ci] = acc * inv_m;
                let mut acc2 = T::ZERO;
                for ni in 0..n {
                    for &v in x.plane(ni, ci) {
                        let d = v - mean[ci];
                        acc2 += d * d;
                    }
                }
                var[ci] = acc2 * inv_m;
            }
            if let Some((rm, rv)) = running {
                let unbias = if m > 1 {
                    T::from_f64(m as f64 / (m - 1) as f64)
                } else {
                    T::ONE
                };
                for ci in 0..c {
                    rm.data_mut()[ci] = (T::ONE - momentum) * rm.data()[ci] + momentum * mean[ci];
                    rv.data_mut()[ci] =
                        (T::ONE - momentum) * rv.data()[ci] + momentum * var[ci] * unbias;
                }
            }
            (mean, var, true)
        }
        Mode::Eval => {
            let (rm, rv) = running.ok_or(CoreError::InvalidArg {
                op: "batch_norm",
                what: "eval mode requires running statistics".into(),
            })?;
            (rm.data().to_vec(), rv.data().to_vec(), false)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = gamma.data()[ci];
            let b = beta.data()[ci];
            let mu = mean[ci];
            let istd = inv_std[ci];
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * istd * g + b;
            }
        }
    }
    Ok((out, mean, inv_std, batch_stats))
}

/// Returns (dx, dgamma, dbeta). With batch statistics the mean/variance
/// terms are functions of x and contribute the usual centering terms; with
/// running statistics they are constants.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &[T],
    mean: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let m = n * h * w;
    let hw = h * w;
    let inv_m = T::from_f64(1.0 / m as f64);

    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    let mut dx = vec![T::ZERO; x.numel()];

    for ci in 0..c {
        let mu = mean[ci];
        let istd = inv_std[ci];
        let mut sum_g = T::ZERO;
        let mut sum_g_xhat = T::ZERO;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            let src = x.plane(ni, ci);
            for (j, &xv) in src.iter().enumerate() {
                let g = dy[base + j];
                sum_g += g;
                sum_g_xhat += g * (xv - mu) * istd;
            }
        }
        dgamma[ci] = sum_g_xhat;
        dbeta[ci] = sum_g;

        let gam = gamma.data()[ci];
        if batch_stats {
            let mean_g = sum_g * inv_m;
            let mean_g_xhat = sum_g_xhat * inv_m;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                let src = x.plane(ni, ci);
                for (j, &xv) in src.iter().enumerate() {
                    let g = dy[base + j];
                    let xhat = (xv - mu) * istd;
                    dx[base + j] = gam * istd * (g - mean_g - xhat * mean_g_xhat);
                }
            }
        } else {
            let k = gam * istd;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for j in 0..hw {
                    dx[base + j] = k * dy[base + j];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
