//! Miniature residual backbone with per-stage spectral context.
//!
//! A two-conv stem brings the image to stride 4, then four stages of basic
//! residual blocks emit features at strides 4/8/16/32. Each stage output
//! is passed through a Fourier Unit when enabled; disabling the unit (or
//! leaving its zero-initialized weights untouched) reproduces the vanilla
//! backbone bit-exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Axis, CoreError, CoreResult};
use crate::layers::{BatchNorm, Conv2d, ConvBnRelu};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::spectral::FourierUnit;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

/// Configuration of one backbone stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Spatial stride of the stage's first block; 1 or 2.
    pub stride: usize,
    pub fu_enabled: bool,
}

/// Ordered per-level features at strides 4, 8, 16, 32 (levels 2..=5).
#[derive(Debug, Clone, Copy)]
pub struct PyramidFeatures {
    pub levels: [NodeId; 4],
}

impl PyramidFeatures {
    pub fn stride(level_index: usize) -> usize {
        4 << level_index
    }
}

/// Basic residual block: two 3x3 conv-BN with a ReLU between, identity or
/// 1x1-projected shortcut, ReLU after the sum.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    bn2: BatchNorm<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm<T>)>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(name: &str, rng: &mut Rng, cin: usize, cout: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(&format!("{name}.down.conv"), rng, cin, cout, 1, stride, 0, false),
                BatchNorm::new(&format!("{name}.down.bn"), cout),
            )
        });
        ResidualBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), rng, cin, cout, 3, stride, 1, false),
            bn1: BatchNorm::new(&format!("{name}.bn1"), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), rng, cout, cout, 3, 1, 1, false),
            bn2: BatchNorm::new(&format!("{name}.bn2"), cout),
            shortcut,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: Mode) -> CoreResult<NodeId> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, y, mode)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y)?;
        let y = self.bn2.forward(tape, y, mode)?;
        let short = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, x)?;
                bn.forward(tape, s, mode)?
            }
            None => x,
        };
        let sum = tape.add(y, short)?;
        Ok(tape.relu(sum))
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        if let Some((conv, bn)) = self.shortcut.as_mut() {
            conv.collect_params(out);
            bn.collect_params(out);
        }
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv1.collect_state(out);
        self.bn1.collect_state(out);
        self.conv2.collect_state(out);
        self.bn2.collect_state(out);
        if let Some((conv, bn)) = self.shortcut.as_mut() {
            conv.collect_state(out);
            bn.collect_state(out);
        }
    }
}

struct Stage<T> {
    blocks: Vec<ResidualBlock<T>>,
    /// One unit per block when the per-block placement is selected.
    block_fus: Vec<FourierUnit<T>>,
    /// One unit on the stage output (the default placement).
    stage_fu: Option<FourierUnit<T>>,
}

/// The backbone: stem + four stages, each optionally emitting spectral
/// global context through a Fourier Unit.
pub struct FResNet<T: Scalar> {
    stem1: ConvBnRelu<T>,
    stem2: ConvBnRelu<T>,
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> FResNet<T> {
    /// `fu_per_block` switches the unit placement from one-per-stage to
    /// one-after-every-block.
    pub fn new(rng: &mut Rng, in_channels: usize, stages: &[StageSpec], fu_per_block: bool) -> Self {
        let c0 = stages[0].channels;
        let stem1 = ConvBnRelu::new("backbone.stem1", rng, in_channels, c0, 3, 2);
        let stem2 = ConvBnRelu::new("backbone.stem2", rng, c0, c0, 3, 2);
        let mut built = Vec::new();
        let mut cin = c0;
        for (si, spec) in stages.iter().enumerate() {
            let mut blocks = Vec::new();
            let mut block_fus = Vec::new();
            for bi in 0..spec.blocks {
                let name = format!("backbone.stage{}.block{bi}", si + 1);
                let stride = if bi == 0 { spec.stride } else { 1 };
                blocks.push(ResidualBlock::new(&name, rng, cin, spec.channels, stride));
                cin = spec.channels;
                if spec.fu_enabled && fu_per_block {
                    block_fus.push(FourierUnit::new(&format!("{name}.fu"), spec.channels));
                }
            }
            let stage_fu = (spec.fu_enabled && !fu_per_block)
                .then(|| FourierUnit::new(&format!("backbone.stage{}.fu", si + 1), spec.channels));
            built.push(Stage {
                blocks,
                block_fus,
                stage_fu,
            });
        }
        FResNet {
            stem1,
            stem2,
            stages: built,
        }
    }

    /// Emit G2..G5. The input must be divisible by 32 on both spatial axes
    /// so every stage halves cleanly; checked before any compute.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        image: NodeId,
        mode: Mode,
    ) -> CoreResult<PyramidFeatures> {
        let [_, _, h, w] = tape.value(image).shape();
        if h % 32 != 0 {
            return Err(CoreError::DimMismatch {
                op: "f_resnet_forward",
                axis: Axis::Height,
                expected: 32,
                got: h,
            });
        }
        if w % 32 != 0 {
            return Err(CoreError::DimMismatch {
                op: "f_resnet_forward",
                axis: Axis::Width,
                expected: 32,
                got: w,
            });
        }
        let mut x = self.stem1.forward(tape, image, mode)?;
        x = self.stem2.forward(tape, x, mode)?;
        let mut levels = [x; 4];
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.blocks.iter_mut().enumerate() {
                x = block.forward(tape, x, mode)?;
                if let Some(fu) = stage.block_fus.get_mut(bi) {
                    x = fu.forward(tape, x, mode)?;
                }
            }
            if let Some(fu) = stage.stage_fu.as_mut() {
                x = fu.forward(tape, x, mode)?;
            }
            levels[si] = x;
        }
        Ok(PyramidFeatures { levels })
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.stem1.collect_params(out);
        self.stem2.collect_params(out);
        for stage in self.stages.iter_mut() {
            for b in stage.blocks.iter_mut() {
                b.collect_params(out);
            }
            for fu in stage.block_fus.iter_mut() {
                fu.collect_params(out);
            }
            if let Some(fu) = stage.stage_fu.as_mut() {
                fu.collect_params(out);
            }
        }
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.stem1.collect_state(out);
        self.stem2.collect_state(out);
        for stage in self.stages.iter_mut() {
            for b in stage.blocks.iter_mut() {
                b.collect_state(out);
            }
            for fu in stage.block_fus.iter_mut() {
                fu.collect_state(out);
            }
            if let Some(fu) = stage.stage_fu.as_mut() {
                fu.collect_state(out);
            }
        }
    }
}
