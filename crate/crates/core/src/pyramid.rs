//! Bilateral spectral-aware feature pyramid.
//!
//! Lateral 1x1 projections bring the backbone widths to a common channel
//! count, a top-down path refines with content-aware (carafe) upsampling,
//! a bottom-up path reinjects shallow detail through learned stride-2
//! downsampling, and per-level channel attention gates a skip connection
//! from the projected backbone features:
//!
//!   U_i = Conv(P_i + Upsample(U_{i+1}))        top-down
//!   B_{i+1} = Conv(U_{i+1} + Downsample(B_i))  bottom-up, B_2 = U_2
//!   S_i = sigmoid(T2(GAP(T1(P_i))))            channel attention
//!   L_i = B_i + S_i * P_i                      gated skip fusion
//!
//! The plain pyramid used as the ablation baseline keeps the laterals and
//! the top-down convs but upsamples nearest-neighbor and stops at L_i = U_i.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backbone::PyramidFeatures;
use crate::error::{Axis, CoreError, CoreResult};
use crate::layers::{Conv2d, ConvBnRelu};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CarafeConfig {
    /// Reassembly kernel size (odd).
    pub k_up: usize,
    /// Kernel-prediction conv size.
    pub k_enc: usize,
    /// Channel compression width for the predictor.
    pub c_mid: usize,
}

impl Default for CarafeConfig {
    fn default() -> Self {
        CarafeConfig {
            k_up: 5,
            k_enc: 3,
            c_mid: 16,
        }
    }
}

/// Content-aware 2x upsampler: a compressed encoding of the input predicts
/// a softmax-normalized reassembly kernel per output location.
#[derive(Debug, Clone)]
pub struct CarafeUpsampler<T> {
    pub compressor: Conv2d<T>,
    pub encoder: Conv2d<T>,
    pub k_up: usize,
}

impl<T: Scalar> CarafeUpsampler<T> {
    pub fn new(name: &str, rng: &mut Rng, channels: usize, cfg: CarafeConfig) -> Self {
        CarafeUpsampler {
            compressor: Conv2d::new(
                &format!("{name}.compress"),
                rng,
                channels,
                cfg.c_mid,
                1,
                1,
                0,
                true,
            ),
            encoder: Conv2d::new(
                &format!("{name}.encode"),
                rng,
                cfg.c_mid,
                4 * cfg.k_up * cfg.k_up,
                cfg.k_enc,
                1,
                cfg.k_enc / 2,
                true,
            ),
            k_up: cfg.k_up,
        }
    }

    /// Predicted kernels for `x`, already softmax-normalized:
    /// `[N, k_up^2, 2H, 2W]`, summing to 1 at every output location.
    pub fn predict_kernels(&self, tape: &mut Tape<T>, x: NodeId) -> CoreResult<NodeId> {
        let z = self.compressor.forward(tape, x)?;
        let z = self.encoder.forward(tape, z)?;
        let z = tape.pixel_shuffle2(z)?;
        Ok(tape.softmax_channels(z))
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> CoreResult<NodeId> {
        let kernels = self.predict_kernels(tape, x)?;
        tape.carafe_reassemble(x, kernels, self.k_up)
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.compressor.collect_params(out);
        self.encoder.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.compressor.collect_state(out);
        self.encoder.collect_state(out);
    }
}

/// Channel-wise attention: GAP of a 3x3 conv-BN-ReLU transform, sigmoid of
/// a 1x1 conv, yielding per-channel gates strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct Cam<T> {
    pub t1: ConvBnRelu<T>,
    pub t2: Conv2d<T>,
}

impl<T: Scalar> Cam<T> {
    pub fn new(name: &str, rng: &mut Rng, channels: usize) -> Self {
        Cam {
            t1: ConvBnRelu::new(&format!("{name}.t1"), rng, channels, channels, 3, 1),
            t2: Conv2d::new(&format!("{name}.t2"), rng, channels, channels, 1, 1, 0, true),
        }
    }

    /// Pooled context of the transformed features: `Z = GAP(T1(x))`.
    pub fn pooled(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let t = self.t1.forward(tape, x, mode)?;
        tape.global_avg_pool(t)
    }

    /// The gate `S = sigmoid(T2(Z))`, shape `[N, C, 1, 1]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let z = self.pooled(tape, x, mode)?;
        let z = self.t2.forward(tape, z)?;
        Ok(tape.sigmoid(z))
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.t1.collect_params(out);
        self.t2.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.t1.collect_state(out);
        self.t2.collect_state(out);
    }
}

/// Which backbone feature feeds the gated skip term: the lateral
/// projection (default; the widths already match the fused features) or
/// the raw stage output (valid only when stage widths equal the pyramid
/// width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipSource {
    LateralProjection,
    RawBackbone,
}

pub struct BsFpn<T> {
    laterals: Vec<Conv2d<T>>,
    td_convs: Vec<Conv2d<T>>,
    carafes: Vec<CarafeUpsampler<T>>,
    bu_convs: Vec<Conv2d<T>>,
    downsamples: Vec<Conv2d<T>>,
    cams: Vec<Cam<T>>,
    skip_source: SkipSource,
    in_channels: [usize; 4],
    pub channels: usize,
}

impl<T: Scalar> BsFpn<T> {
    pub fn new(
        rng: &mut Rng,
        in_channels: [usize; 4],
        channels: usize,
        carafe: CarafeConfig,
        skip_source: SkipSource,
    ) -> Self {
        let laterals = (0..4)
            .map(|i| {
                Conv2d::new(
                    &format!("neck.lateral{}", i + 2),
                    rng,
                    in_channels[i],
                    channels,
                    1,
                    1,
                    0,
                    true,
                )
            })
            .collect();
        let td_convs = (0..4)
            .map(|i| Conv2d::new(&format!("neck.td{}", i + 2), rng, channels, channels, 1, 1, 0, true))
            .collect();
        let carafes = (0..3)
            .map(|i| CarafeUpsampler::new(&format!("neck.up{}", i + 3), rng, channels, carafe))
            .collect();
        let bu_convs = (0..3)
            .map(|i| Conv2d::new(&format!("neck.bu{}", i + 3), rng, channels, channels, 1, 1, 0, true))
            .collect();
        let downsamples = (0..3)
            .map(|i| {
                Conv2d::new(&format!("neck.down{}", i + 3), rng, channels, channels, 3, 2, 1, true)
            })
            .collect();
        let cams = (0..4)
            .map(|i| Cam::new(&format!("neck.cam{}", i + 2), rng, channels))
            .collect();
        BsFpn {
            laterals,
            td_convs,
            carafes,
            bu_convs,
            downsamples,
            cams,
            skip_source,
            in_channels,
            channels,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        feats: &PyramidFeatures,
        mode: Mode,
    ) -> CoreResult<PyramidFeatures> {
        // lateral projections to the common width
        let mut p = [feats.levels[0]; 4];
        for i in 0..4 {
            p[i] = self.laterals[i].forward(tape, feats.levels[i])?;
        }

        // top-down: U5 = Conv(P5); U_i = Conv(P_i + Upsample(U_{i+1}))
        let mut u = p;
        u[3] = self.td_convs[3].forward(tape, p[3])?;
        for i in (0..3).rev() {
            let up = self.carafes[i].forward(tape, u[i + 1])?;
            let (eh, ph) = (tape.value(up).shape()[2], tape.value(p[i]).shape()[2]);
            if eh != ph {
                return Err(CoreError::DimMismatch {
                    op: "top_down_step",
                    axis: Axis::Height,
                    expected: ph,
                    got: eh,
                });
            }
            let sum = tape.add(p[i], up)?;
            u[i] = self.td_convs[i].forward(tape, sum)?;
        }

        // bottom-up: B2 = U2; B_{i+1} = Conv(U_{i+1} + Downsample(B_i))
        let mut b = u;
        b[0] = u[0];
        for i in 0..3 {
            let down = self.downsamples[i].forward(tape, b[i])?;
            let (dh, uh) = (tape.value(down).shape()[2], tape.value(u[i + 1]).shape()[2]);
            if dh != uh {
                return Err(CoreError::DimMismatch {
                    op: "bottom_up_step",
                    axis: Axis::Height,
                    expected: uh,
                    got: dh,
                });
            }
            let sum = tape.add(u[i + 1], down)?;
            b[i + 1] = self.bu_convs[i].forward(tape, sum)?;
        }

        // gated skip fusion: L_i = B_i + S_i * skip_i
        let mut l = b;
        for i in 0..4 {
            let skip = match self.skip_source {
                SkipSource::LateralProjection => p[i],
                SkipSource::RawBackbone => feats.levels[i],
            };
            let gate = self.cams[i].forward(tape, skip, mode)?;
            let gated = tape.mul_gate(gate, skip)?;
            l[i] = tape.add(b[i], gated)?;
        }
        Ok(PyramidFeatures { levels: l })
    }

    // per-layer access for compositional tests and inspection
    pub fn lateral(&mut self, i: usize) -> &mut Conv2d<T> {
        &mut self.laterals[i]
    }
    pub fn td_conv(&mut self, i: usize) -> &mut Conv2d<T> {
        &mut self.td_convs[i]
    }
    pub fn carafe(&mut self, i: usize) -> &mut CarafeUpsampler<T> {
        &mut self.carafes[i]
    }
    pub fn bu_conv(&mut self, i: usize) -> &mut Conv2d<T> {
        &mut self.bu_convs[i]
    }
    pub fn downsample(&mut self, i: usize) -> &mut Conv2d<T> {
        &mut self.downsamples[i]
    }
    pub fn cam(&mut self, i: usize) -> &mut Cam<T> {
        &mut self.cams[i]
    }

    /// The raw-backbone skip requires every stage width to equal the
    /// pyramid width; checked at construction time by the model.
    pub fn validate_skip_source(&self) -> CoreResult<()> {
        if self.skip_source == SkipSource::RawBackbone {
            for &c in self.in_channels.iter() {
                if c != self.channels {
                    return Err(CoreError::DimMismatch {
                        op: "bs_fpn skip_source=raw",
                        axis: Axis::Channel,
                        expected: self.channels,
                        got: c,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        for c in self.laterals.iter_mut() {
            c.collect_params(out);
        }
        for c in self.td_convs.iter_mut() {
            c.collect_params(out);
        }
        for c in self.carafes.iter_mut() {
            c.collect_params(out);
        }
        for c in self.bu_convs.iter_mut() {
            c.collect_params(out);
        }
        for c in self.downsamples.iter_mut() {
            c.collect_params(out);
        }
        for c in self.cams.iter_mut() {
            c.collect_params(out);
        }
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for c in self.laterals.iter_mut() {
            c.collect_state(out);
        }
        for c in self.td_convs.iter_mut() {
            c.collect_state(out);
        }
        for c in self.carafes.iter_mut() {
            c.collect_state(out);
        }
        for c in self.bu_convs.iter_mut() {
            c.collect_state(out);
        }
        for c in self.downsamples.iter_mut() {
            c.collect_state(out);
        }
        for c in self.cams.iter_mut() {
            c.collect_state(out);
        }
    }
}

/// Plain pyramid for the ablation baseline: laterals, nearest-neighbor 2x
/// upsampling, 1x1 merge convs; no bottom-up path, no attention.
pub struct PlainFpn<T> {
    laterals: Vec<Conv2d<T>>,
    td_convs: Vec<Conv2d<T>>,
    pub channels: usize,
}

impl<T: Scalar> PlainFpn<T> {
    pub fn new(rng: &mut Rng, in_channels: [usize; 4], channels: usize) -> Self {
        let laterals = (0..4)
            .map(|i| {
                Conv2d::new(
                    &format!("neck.lateral{}", i + 2),
                    rng,
                    in_channels[i],
                    channels,
                    1,
                    1,
                    0,
                    true,
                )
            })
            .collect();
        let td_convs = (0..4)
            .map(|i| Conv2d::new(&format!("neck.td{}", i + 2), rng, channels, channels, 1, 1, 0, true))
            .collect();
        PlainFpn {
            laterals,
            td_convs,
            channels,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        feats: &PyramidFeatures,
    ) -> CoreResult<PyramidFeatures> {
        let mut p = [feats.levels[0]; 4];
        for i in 0..4 {
            p[i] = self.laterals[i].forward(tape, feats.levels[i])?;
        }
        let mut u = p;
        u[3] = self.td_convs[3].forward(tape, p[3])?;
        for i in (0..3).rev() {
            let up = tape.upsample_nearest2(u[i + 1]);
            let sum = tape.add(p[i], up)?;
            u[i] = self.td_convs[i].forward(tape, sum)?;
        }
        Ok(PyramidFeatures { levels: u })
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        for c in self.laterals.iter_mut() {
            c.collect_params(out);
        }
        for c in self.td_convs.iter_mut() {
            c.collect_params(out);
        }
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for c in self.laterals.iter_mut() {
            c.collect_state(out);
        }
        for c in self.td_convs.iter_mut() {
            c.collect_state(out);
        }
    }
}
