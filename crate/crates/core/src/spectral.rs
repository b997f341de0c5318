//! The Fourier Unit: FFT, 1x1 conv-BN-ReLU on the stacked real/imaginary
//! channels, inverse FFT, residual add.
//!
//! A spectrum on the tape is a single `[N, 2C, H, Wf]` node: the FFT op
//! emits real parts in channels `0..C` and imaginary parts in `C..2C`, so
//! the join along the channel dimension is the layout itself and the split
//! before inversion is implicit. Updating any spectral value moves every
//! spatial position of the inverse, which is what gives the unit its
//! global receptive field.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Axis, CoreError, CoreResult};
use crate::layers::{BatchNorm, Conv2d};
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

/// Frequency-domain node: stacked `[N, 2C, H, Wf]` with bookkeeping for the
/// exact inverse.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumNode {
    pub node: NodeId,
    pub channels: usize,
    pub source_width: usize,
}

/// Forward FFT of `[N, C, H, W]` into a stacked spectrum node.
pub fn rfft2<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> CoreResult<SpectrumNode> {
    let [_, c, _, w] = tape.value(x).shape();
    let node = tape.rfft2(x)?;
    Ok(SpectrumNode {
        node,
        channels: c,
        source_width: w,
    })
}

/// Inverse FFT of a stacked spectrum back to `[N, C, H, source_width]`.
pub fn irfft2<T: Scalar>(tape: &mut Tape<T>, spec: SpectrumNode) -> CoreResult<NodeId> {
    tape.irfft2(spec.node, spec.source_width)
}

/// Spectral mixing parameters: a bias-free 1x1 convolution over the 2C
/// stacked channels plus batch norm. The convolution mixes channels only;
/// frequency-bin positions never mix.
#[derive(Debug, Clone)]
pub struct FourierUnit<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    channels: usize,
}

impl<T: Scalar> FourierUnit<T> {
    /// Spectral weights start at zero so the unit is an exact identity at
    /// initialization (the residual passes through untouched).
    pub fn new(name: &str, channels: usize) -> Self {
        FourierUnit {
            conv: Conv2d::zero_init(
                &format!("{name}.conv"),
                2 * channels,
                2 * channels,
                1,
                1,
                0,
            ),
            bn: BatchNorm::new(&format!("{name}.bn"), 2 * channels),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// conv -> BN -> ReLU in the frequency domain; a global update of the
    /// spectral data.
    pub fn spectral_conv(
        &mut self,
        tape: &mut Tape<T>,
        spec: SpectrumNode,
        mode: Mode,
    ) -> CoreResult<SpectrumNode> {
        if spec.channels != self.channels {
            return Err(CoreError::DimMismatch {
                op: "spectral_conv",
                axis: Axis::Channel,
                expected: self.channels,
                got: spec.channels,
            });
        }
        let z = self.conv.forward(tape, spec.node)?;
        let z = self.bn.forward(tape, z, mode)?;
        let z = tape.relu(z);
        Ok(SpectrumNode { node: z, ..spec })
    }

    /// Full unit: `irfft2(spectral_conv(rfft2(x))) + x`. Output shape
    /// equals input shape.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let spec = rfft2(tape, x)?;
        let spec = self.spectral_conv(tape, spec, mode)?;
        let y = irfft2(tape, spec)?;
        tape.add(y, x)
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.collect_state(out);
        self.bn.collect_state(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tape::finite_diff_check;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.range(-1.0, 1.0))
    }

    #[test]
    fn zero_spectrum_stays_zero_through_spectral_conv() {
        // bias-free conv, BN beta = 0, ReLU: zero propagates exactly
        let mut fu = FourierUnit::<f64>::new("fu", 4);
        let mut rng = Rng::new(9);
        for v in fu.conv.weight.value.data_mut() {
            *v = rng.normal() * 0.1;
        }
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros([2, 8, 6, 4]));
        let spec = SpectrumNode {
            node: z,
            channels: 4,
            source_width: 6,
        };
        let out = fu.spectral_conv(&mut tape, spec, Mode::Train).unwrap();
        assert!(tape.value(out.node).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_is_preserved() {
        let mut fu = FourierUnit::<f32>::new("fu", 16);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 16, 32, 32]));
        let y = fu.forward(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(tape.value(y).shape(), [2, 16, 32, 32]);
    }

    #[test]
    fn zero_init_unit_is_exact_identity() {
        let mut fu = FourierUnit::<f64>::new("fu", 3);
        let x = random_tensor([2, 3, 8, 8], 4);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = fu.forward(&mut tape, xid, Mode::Train).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut fu = FourierUnit::<f64>::new("fu", 4);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros([1, 6, 4, 3]));
        let spec = SpectrumNode {
            node: z,
            channels: 3,
            source_width: 4,
        };
        assert!(matches!(
            fu.spectral_conv(&mut tape, spec, Mode::Train),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn one_by_one_spectral_multiply_equals_circular_convolution() {
        // A real constant a applied to every bin through the 1x1 conv is
        // circular convolution with the kernel a*delta, i.e. a*x. BN and
        // ReLU bypassed.
        let a = 1.37f64;
        let c = 2usize;
        let x = random_tensor([1, c, 8, 8], 21);
        let mut weight = Tensor::zeros([2 * c, 2 * c, 1, 1]);
        for ch in 0..2 * c {
            weight.set(ch, ch, 0, 0, a);
        }
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let spec = rfft2(&mut tape, xid).unwrap();
        let w = tape.leaf(weight);
        let z = tape.conv2d(spec.node, w, None, 1, 0).unwrap();
        let y = irfft2(&mut tape, SpectrumNode { node: z, ..spec }).unwrap();
        let got = tape.value(y);
        for (g, &xv) in got.data().iter().zip(x.data()) {
            assert!((g - a * xv).abs() < 1e-4);
        }
    }

    #[test]
    fn single_pixel_perturbation_reaches_nearly_all_positions() {
        let c = 4usize;
        let (h, w) = (16usize, 16usize);
        let mut fu = FourierUnit::<f64>::new("fu", c);
        let mut rng = Rng::new(33);
        for v in fu.conv.weight.value.data_mut() {
            *v = rng.normal() * 0.2;
        }
        let x = random_tensor([1, c, h, w], 34);
        let mut bumped = x.clone();
        let idx = bumped.index(0, 2, 5, 7);
        bumped.data_mut()[idx] += 1.0;

        let run = |fu: &mut FourierUnit<f64>, t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let xid = tape.leaf(t.clone());
            let y = fu.forward(&mut tape, xid, Mode::Eval).unwrap();
            tape.value(y).clone()
        };
        let base = run(&mut fu, &x);
        let moved = run(&mut fu, &bumped);
        let total = base.numel();
        let changed = base
            .data()
            .iter()
            .zip(moved.data())
            .filter(|(a, b)| (*a - *b).abs() > 1e-9)
            .count();
        assert!(
            changed as f64 >= 0.99 * total as f64,
            "only {changed}/{total} positions changed"
        );
    }

    #[test]
    fn gradient_through_the_fft_pair() {
        let c = 2usize;
        let x = random_tensor([1, c, 4, 6], 51);
        let mut w0 = Tensor::zeros([2 * c, 2 * c, 1, 1]);
        let mut rng = Rng::new(52);
        for v in w0.data_mut() {
            *v = rng.normal() * 0.3;
        }
        let gamma = Tensor::full([1, 2 * c, 1, 1], 1.0);
        let beta = Tensor::zeros([1, 2 * c, 1, 1]);
        let inputs = [
            ("x", x),
            ("w", w0),
            ("gamma", gamma),
            ("beta", beta),
        ];
        // sigmoid before the reduction keeps every gradient generically
        // nonzero, so the relative-error floor stays meaningful
        let res = finite_diff_check(&inputs, 1e-4, None, 7, |tape, ids| {
            let spec = rfft2(tape, ids[0])?;
            let z = tape.conv2d(spec.node, ids[1], None, 1, 0)?;
            let z = tape.batch_norm(z, ids[2], ids[3], None, 0.1, 1e-5, Mode::Train)?;
            let z = tape.relu(z);
            let y = tape.irfft2(z, spec.source_width)?;
            let out = tape.add(y, ids[0])?;
            let out = tape.sigmoid(out);
            Ok(tape.sum_all(out))
        })
        .unwrap();
        assert!(
            res.passes(1e-6),
            "max rel error {} at {:?}",
            res.max_rel_error,
            res.worst
        );
    }
}
