//! Fused detection loss kernels: sigmoid focal loss and smooth L1.
//!
//! Both produce an unnormalized sum; the caller divides by the positive
//! count with a `scale` node. Targets are per-element: -1 ignores the
//! entry, 0/1 are the two classes of the binary sub-problem.

use crate::scalar::{softplus, Scalar};
use crate::tensor::Tensor;

/// FL(z, t) = -alpha_t * (1 - p_t)^gamma * ln(p_t), p = sigmoid(z),
/// p_t = p if t == 1 else 1 - p.
pub(crate) fn focal_forward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[i8],
    alpha: f64,
    gamma: f64,
) -> T {
    let alpha = T::from_f64(alpha);
    let gamma_u = gamma as u32;
    debug_assert_eq!(gamma, gamma_u as f64, "integer gamma expected");
    let mut acc = T::ZERO;
    for (&z, &t) in logits.data().iter().zip(targets) {
        if t < 0 {
            continue;
        }
        let zt = if t == 1 { z } else { -z };
        // ln(p_t) = -softplus(-z_t), stable on both tails
        let ln_pt = -softplus(-zt);
        let pt = ln_pt.exp();
        let alpha_t = if t == 1 { alpha } else { T::ONE - alpha };
        acc += -alpha_t * pow_u32(T::ONE - pt, gamma_u) * ln_pt;
    }
    acc
}

pub(crate) fn focal_backward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[i8],
    alpha: f64,
    gamma: f64,
    upstream: T,
    dz: &mut [T],
) {
    let alpha = T::from_f64(alpha);
    let gamma_u = gamma as u32;
    let gamma_t = T::from_f64(gamma);
    for (i, (&z, &t)) in logits.data().iter().zip(targets).enumerate() {
        if t < 0 {
            continue;
        }
        let zt = if t == 1 { z } else { -z };
        let ln_pt = -softplus(-zt);
        let pt = ln_pt.exp();
        let alpha_t = if t == 1 { alpha } else { T::ONE - alpha };
        let sign = if t == 1 { T::ONE } else { -T::ONE };
        // d FL / dz = alpha_t * sign * (1-p_t)^gamma * (gamma * p_t * ln p_t - (1 - p_t))
        let d = alpha_t
            * sign
            * pow_u32(T::ONE - pt, gamma_u)
            * (gamma_t * pt * ln_pt - (T::ONE - pt));
        dz[i] += upstream * d;
    }
}

/// Smooth L1 with threshold beta: 0.5 d^2 / beta inside, |d| - 0.5 beta
/// outside.
pub(crate) fn smooth_l1_forward<T: Scalar>(
    pred: &Tensor<T>,
    targets: &[T],
    mask: &[bool],
    beta: f64,
) -> T {
    let beta = T::from_f64(beta);
    let half = T::from_f64(0.5);
    let mut acc = T::ZERO;
    for ((&p, &t), &m) in pred.data().iter().zip(targets).zip(mask) {
        if !m {
            continue;
        }
        let d = (p - t).abs();
        acc += if d < beta {
            half * d * d / beta
        } else {
            d - half * beta
        };
    }
    acc
}

pub(crate) fn smooth_l1_backward<T: Scalar>(
    pred: &Tensor<T>,
    targets: &[T],
    mask: &[bool],
    beta: f64,
    upstream: T,
    dp: &mut [T],
) {
    let beta = T::from_f64(beta);
    for (i, ((&p, &t), &m)) in pred.data().iter().zip(targets).zip(mask).enumerate() {
        if !m {
            continue;
        }
        let d = p - t;
        let g = if d.abs() < beta {
            d / beta
        } else if d > T::ZERO {
            T::ONE
        } else {
            -T::ONE
        };
        dp[i] += upstream * g;
    }
}

#[inline]
fn pow_u32<T: Scalar>(base: T, e: u32) -> T {
    let mut acc = T::ONE;
    for _ in 0..e {
        acc *= base;
    }
    acc
}
