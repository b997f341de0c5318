//! SGD with momentum and the step learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Parameter;

/// Default global-norm gradient clip, the remedy the reference detection
/// stacks apply when training focal-loss heads from scratch.
pub const DEFAULT_CLIP_NORM: f64 = 35.0;

/// Learning rate for a 1-based epoch: the base rate decays by 0.1 after
/// epochs ceil(2E/3) and ceil(11E/12). For the default 12 epochs those are
/// epochs 8 and 11, giving 0.01 / 0.001 / 0.0001 over epochs 1-8 / 9-11 /
/// 12 at base 0.01.
pub fn lr_for_epoch(base: f64, total_epochs: usize, epoch: usize) -> f64 {
    let d1 = (2 * total_epochs).div_ceil(3);
    let d2 = (11 * total_epochs).div_ceil(12);
    let mut lr = base;
    if epoch > d1 {
        lr *= 0.1;
    }
    if epoch > d2 {
        lr *= 0.1;
    }
    lr
}

/// v = mu * v + (g + wd * w); w -= lr * v, with optional clipping of the
/// global gradient norm before the update. Buffers are keyed by parameter
/// name and live across steps.
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global L2 norm ceiling applied to the raw gradients each step.
    pub clip_norm: Option<f64>,
    buffers: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            buffers: BTreeMap::new(),
        }
    }

    /// Apply one update using the gradients recorded on `tape`. Every
    /// trainable parameter takes part exactly once; parameters the loss
    /// never reached have zero gradients and only decay.
    pub fn step(&mut self, lr: f64, params: &mut [&mut Parameter<T>], tape: &Tape<T>) {
        let scale = match self.clip_norm {
            Some(max) => {
                let mut norm2 = 0.0f64;
                for p in params.iter() {
                    if !p.trainable {
                        continue;
                    }
                    if let Some(g) = tape.param_grad(&p.name) {
                        norm2 += g.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>();
                    }
                }
                let norm = norm2.sqrt();
                if norm > max {
                    T::from_f64(max / norm)
                } else {
                    T::ONE
                }
            }
            None => T::ONE,
        };
        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let lr = T::from_f64(lr);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = tape
                .param_grad(&p.name)
                .expect("trainable parameter missing from tape");
            let buf = self
                .buffers
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::ZERO; p.value.numel()]);
            for ((w, &g), v) in p.value.data_mut().iter_mut().zip(grad).zip(buf.iter_mut()) {
                *v = mu * *v + (g * scale + wd * *w);
                *w -= lr * *v;
            }
        }
    }

    /// Momentum buffers as named state, for checkpointing.
    pub fn state(&self) -> impl Iterator<Item = (&String, &Vec<T>)> {
        self.buffers.iter()
    }

    pub fn restore(&mut self, name: &str, buf: Vec<T>) {
        self.buffers.insert(String::from(name), buf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_matches_declared_shape_at_twelve_epochs() {
        for e in 1..=8 {
            assert_eq!(lr_for_epoch(0.01, 12, e), 0.01, "epoch {e}");
        }
        for e in 9..=11 {
            assert!((lr_for_epoch(0.01, 12, e) - 0.001).abs() < 1e-15, "epoch {e}");
        }
        assert!((lr_for_epoch(0.01, 12, 12) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn schedule_scales_proportionally() {
        // E = 6: decays after ceil(4) = 4 and ceil(66/12) = 6
        assert_eq!(lr_for_epoch(0.01, 6, 4), 0.01);
        assert!((lr_for_epoch(0.01, 6, 5) - 0.001).abs() < 1e-15);
        assert!((lr_for_epoch(0.01, 6, 6) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_update_matches_hand_arithmetic() {
        let mut p = Parameter::new("w", Tensor::from_vec([1, 1, 1, 1], vec![1.0f64]).unwrap());
        let mut opt = Sgd::new(0.9, 0.0);
        let mut tape = Tape::new();
        let id = tape.param("w", &p.value).unwrap();
        let s = tape.sum_all(id); // dL/dw = 1
        tape.backward(s).unwrap();
        opt.step(0.1, &mut [&mut p], &tape);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-12); // v=1, w=1-0.1
        // second step with the same gradient: v = 0.9 + 1 = 1.9
        let mut tape2 = Tape::new();
        let id2 = tape2.param("w", &p.value).unwrap();
        let s2 = tape2.sum_all(id2);
        tape2.backward(s2).unwrap();
        opt.step(0.1, &mut [&mut p], &tape2);
        assert!((p.value.data()[0] - (0.9 - 0.19)).abs() < 1e-12);
    }
}
