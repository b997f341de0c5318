//! Deterministic training loop, evaluation, and the four-way ablation
//! driver. Everything here is pure compute over an in-memory dataset; the
//! CLI crate owns file formats and logging sinks.

use alloc::string::String;
use alloc::vec::Vec;

use crate::detect::{
    assign_targets, build_anchors, decode_and_nms, detection_loss, evaluate_map, AnchorLayout,
    GtBox, MapResult, NEG_IOU_THR, POS_IOU_THR,
};
use crate::error::{CoreError, CoreResult};
use crate::model::{Detector, ModelConfig};
use crate::optim::{lr_for_epoch, Sgd};
use crate::rng::Rng;
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;

/// In-memory dataset: square images in CHW layout with values in [0, 1],
/// plus per-image ground-truth boxes.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<Vec<f32>>,
    pub boxes: Vec<Vec<GtBox>>,
    pub size: usize,
    pub channels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn batch_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        let chw = self.channels * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * chw);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::from_vec([indices.len(), self.channels, self.size, self.size], data)
            .expect("consistent image sizes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Shuffling seed; one derived stream per epoch.
    pub seed: u64,
    /// Cap on images used for the per-epoch AP log.
    pub eval_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            seed: 0,
            eval_cap: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub ap50: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainResult {
    pub logs: Vec<EpochLog>,
}

pub fn anchor_layout_for(model: &Detector<f32>, image_size: usize) -> AnchorLayout {
    let sizes = model.level_sizes(image_size, image_size);
    build_anchors(&sizes, &model.config.anchor_scales)
}

/// SGD + momentum over the step schedule. Fixed seed fixes the data order,
/// every forward value, and therefore the final parameters bit-exactly.
/// Aborts with the offending step index if the loss turns non-finite.
pub fn train(
    model: &mut Detector<f32>,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    cfg: &TrainConfig,
    opt: &mut Sgd<f32>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> CoreResult<TrainResult> {
    let layout = anchor_layout_for(model, data.size);
    let mut result = TrainResult::default();
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        let lr = lr_for_epoch(cfg.base_lr, cfg.epochs, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        Rng::derive(cfg.seed, epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let images = data.batch_tensor(chunk);
            let gts: Vec<Vec<GtBox>> = chunk.iter().map(|&i| data.boxes[i].clone()).collect();
            let assignment =
                assign_targets::<f32>(&layout, &gts, model.config.num_classes, POS_IOU_THR, NEG_IOU_THR);

            let mut tape = Tape::new();
            let img = tape.leaf(images);
            let head_out = model.forward(&mut tape, img, Mode::Train)?;
            let loss = detection_loss(&mut tape, &head_out, &assignment)?;
            let loss_val = tape.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(CoreError::NonFiniteLoss { step: global_step });
            }
            tape.backward(loss)?;

            let mut params = Vec::new();
            model.collect_params(&mut params);
            opt.step(lr, &mut params, &tape);

            loss_sum += loss_val;
            batches += 1;
            global_step += 1;
        }

        let eval_on = eval_data.unwrap_or(data);
        let ap50 = evaluate_detector(model, eval_on, cfg.eval_cap)?.map;
        let log = EpochLog {
            epoch,
            lr,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            ap50,
        };
        on_epoch(&log);
        result.logs.push(log);
    }
    Ok(result)
}

/// AP@0.5 over up to `cap` images (0 = all), batch eval-mode forward.
pub fn evaluate_detector(
    model: &mut Detector<f32>,
    data: &Dataset,
    cap: usize,
) -> CoreResult<MapResult> {
    let n = if cap == 0 { data.len() } else { data.len().min(cap) };
    let layout = anchor_layout_for(model, data.size);
    let mut detections = Vec::new();
    let mut gts = Vec::new();
    let batch = 16usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let images = data.batch_tensor(&indices);
        let mut tape = Tape::new();
        let img = tape.leaf(images);
        let head_out = model.forward(&mut tape, img, Mode::Eval)?;
        let cls: Vec<&Tensor<f32>> = head_out.iter().map(|(c, _)| tape.value(*c)).collect();
        let reg: Vec<&Tensor<f32>> = head_out.iter().map(|(_, r)| tape.value(*r)).collect();
        let dets = decode_and_nms(
            &cls,
            &reg,
            &layout,
            model.config.num_classes,
            data.size as f64,
            data.size as f64,
            0.05,
            0.5,
            100,
        );
        for (bi, per_image) in dets.into_iter().enumerate() {
            let image_id = start + bi;
            for d in per_image {
                detections.push((image_id, d));
            }
        }
        start = end;
    }
    for (i, boxes) in data.boxes.iter().take(n).enumerate() {
        for g in boxes {
            gts.push((i, *g));
        }
    }
    evaluate_map(&detections, &gts, 0.5, model.config.num_classes)
}

/// One ablation row: which components are on and what it scored.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub fu: bool,
    pub bs_fpn: bool,
    pub ap50: f64,
    pub final_loss: f64,
}

pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("+spectral-backbone", true, false),
    ("+bilateral-fpn", false, true),
    ("full", true, true),
];

/// Train and evaluate one of the four rows with identical seeds and data
/// ordering. Returns the row result and the trained model.
pub fn ablate_row(
    row: usize,
    base_model: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> CoreResult<(AblationRow, Detector<f32>)> {
    let (name, fu, bs_fpn) = ABLATION_ROWS[row];
    let config = ModelConfig {
        fu_enabled: fu,
        bs_fpn,
        ..base_model.clone()
    };
    let mut model = Detector::new(config)?;
    let mut opt = Sgd::new(train_cfg.momentum, train_cfg.weight_decay);
    let result = train(
        &mut model,
        train_data,
        Some(test_data),
        train_cfg,
        &mut opt,
        &mut on_epoch,
    )?;
    let ap50 = evaluate_detector(&mut model, test_data, 0)?.map;
    Ok((
        AblationRow {
            name: String::from(name),
            fu,
            bs_fpn,
            ap50,
            final_loss: result.logs.last().map(|l| l.mean_loss).unwrap_or(0.0),
        },
        model,
    ))
}

/// The full four-way protocol, sequentially.
pub fn ablate(
    base_model: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    mut on_epoch: impl FnMut(usize, &EpochLog),
) -> CoreResult<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for row in 0..ABLATION_ROWS.len() {
        let (r, _) = ablate_row(row, base_model, train_cfg, train_data, test_data, |log| {
            on_epoch(row, log)
        })?;
        rows.push(r);
    }
    Ok(rows)
}
