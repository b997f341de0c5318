//! Model configuration and the composed detector: backbone, neck, head.

use alloc::string::String;
use alloc::vec::Vec;

use crate::backbone::{FResNet, PyramidFeatures, StageSpec};
use crate::detect::DetectionHead;
use crate::error::CoreResult;
use crate::pyramid::{BsFpn, CarafeConfig, PlainFpn, SkipSource};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

/// All architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stage_blocks: [usize; 4],
    pub stage_channels: [usize; 4],
    /// Spectral units in the backbone.
    pub fu_enabled: bool,
    /// Place one unit after every block instead of one per stage.
    pub fu_per_block: bool,
    /// Bilateral spectral-aware neck; the plain pyramid otherwise.
    pub bs_fpn: bool,
    /// Gated skip uses the lateral projection (default) or the raw
    /// backbone feature.
    pub skip_raw_backbone: bool,
    pub fpn_channels: usize,
    pub carafe: CarafeConfig,
    pub num_classes: usize,
    pub anchor_scales: [f64; 3],
    pub head_tower: usize,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stage_blocks: [1, 1, 1, 1],
            stage_channels: [16, 32, 64, 128],
            fu_enabled: true,
            fu_per_block: false,
            bs_fpn: true,
            skip_raw_backbone: false,
            fpn_channels: 64,
            carafe: CarafeConfig::default(),
            num_classes: 3,
            anchor_scales: [1.0, 1.259_921_049_894_873_2, 1.587_401_051_968_199_5],
            head_tower: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A thin configuration for gradient checks and unit tests. Keeps one
    /// tower conv so the shared-tower path stays covered.
    pub fn tiny() -> Self {
        ModelConfig {
            stage_channels: [4, 4, 8, 8],
            fpn_channels: 8,
            carafe: CarafeConfig {
                k_up: 3,
                k_enc: 3,
                c_mid: 4,
            },
            head_tower: 1,
            ..ModelConfig::default()
        }
    }

    pub fn stages(&self) -> [StageSpec; 4] {
        let mut specs = [StageSpec {
            blocks: 0,
            channels: 0,
            stride: 1,
            fu_enabled: self.fu_enabled,
        }; 4];
        for i in 0..4 {
            specs[i] = StageSpec {
                blocks: self.stage_blocks[i],
                channels: self.stage_channels[i],
                stride: if i == 0 { 1 } else { 2 },
                fu_enabled: self.fu_enabled,
            };
        }
        specs
    }

    /// The architecture fields echoed into checkpoints, as a flat vector.
    pub fn echo(&self) -> Vec<f32> {
        let mut v = Vec::new();
        v.push(self.in_channels as f32);
        v.extend(self.stage_blocks.iter().map(|&b| b as f32));
        v.extend(self.stage_channels.iter().map(|&c| c as f32));
        v.push(self.fu_enabled as u8 as f32);
        v.push(self.fu_per_block as u8 as f32);
        v.push(self.bs_fpn as u8 as f32);
        v.push(self.skip_raw_backbone as u8 as f32);
        v.push(self.fpn_channels as f32);
        v.push(self.carafe.k_up as f32);
        v.push(self.carafe.k_enc as f32);
        v.push(self.carafe.c_mid as f32);
        v.push(self.num_classes as f32);
        v.extend(self.anchor_scales.iter().map(|&s| s as f32));
        v.push(self.head_tower as f32);
        v
    }
}

pub enum Neck<T: Scalar> {
    Plain(PlainFpn<T>),
    Bilateral(BsFpn<T>),
}

/// The full detector.
pub struct Detector<T: Scalar> {
    pub config: ModelConfig,
    pub backbone: FResNet<T>,
    pub neck: Neck<T>,
    pub head: DetectionHead<T>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: ModelConfig) -> CoreResult<Self> {
        let mut rng = Rng::new(config.seed);
        let backbone = FResNet::new(
            &mut rng,
            config.in_channels,
            &config.stages(),
            config.fu_per_block,
        );
        let neck = if config.bs_fpn {
            let fpn = BsFpn::new(
                &mut rng,
                config.stage_channels,
                config.fpn_channels,
                config.carafe,
                if config.skip_raw_backbone {
                    SkipSource::RawBackbone
                } else {
                    SkipSource::LateralProjection
                },
            );
            fpn.validate_skip_source()?;
            Neck::Bilateral(fpn)
        } else {
            Neck::Plain(PlainFpn::new(
                &mut rng,
                config.stage_channels,
                config.fpn_channels,
            ))
        };
        let head = DetectionHead::new(
            &mut rng,
            config.fpn_channels,
            config.num_classes,
            config.anchor_scales.len(),
            config.head_tower,
        );
        Ok(Detector {
            config,
            backbone,
            neck,
            head,
        })
    }

    /// Image through backbone and neck: the fused pyramid L2..L5.
    pub fn features(
        &mut self,
        tape: &mut Tape<T>,
        image: NodeId,
        mode: Mode,
    ) -> CoreResult<PyramidFeatures> {
        let g = self.backbone.forward(tape, image, mode)?;
        match &mut self.neck {
            Neck::Plain(fpn) => fpn.forward(tape, &g),
            Neck::Bilateral(fpn) => fpn.forward(tape, &g, mode),
        }
    }

    /// Full forward to per-level (class logits, box deltas).
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        image: NodeId,
        mode: Mode,
    ) -> CoreResult<Vec<(NodeId, NodeId)>> {
        let feats = self.features(tape, image, mode)?;
        self.head.forward(tape, &feats)
    }

    /// Grid sizes of the four levels for an input of the given size.
    pub fn level_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        (0..4).map(|i| (h >> (2 + i), w >> (2 + i))).collect()
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        self.backbone.collect_params(out);
        match &mut self.neck {
            Neck::Plain(f) => f.collect_params(out),
            Neck::Bilateral(f) => f.collect_params(out),
        }
        self.head.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.backbone.collect_state(out);
        match &mut self.neck {
            Neck::Plain(f) => f.collect_state(out),
            Neck::Bilateral(f) => f.collect_state(out),
        }
        self.head.collect_state(out);
    }
}
