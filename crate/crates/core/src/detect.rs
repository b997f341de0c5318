//! Anchor-based detection: head, target assignment, losses, box decoding,
//! greedy NMS, and VOC-style mAP with all-point interpolation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backbone::PyramidFeatures;
use crate::error::{CoreError, CoreResult};
use crate::layers::Conv2d;
use crate::rng::Rng;
use crate::scalar::{sigmoid, Scalar};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Parameter, Tensor};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
pub const POS_IOU_THR: f64 = 0.5;
pub const NEG_IOU_THR: f64 = 0.4;
/// Classifier bias prior so training starts with rare positives.
pub const PRIOR_PROB: f64 = 0.01;

/// Axis-aligned box in pixels, x1 < x2 and y1 < y2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

/// Intersection over union; symmetric, in [0, 1], and 1 iff the boxes
/// coincide.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A reference box tiled on a pyramid level's stride grid.
#[derive(Debug, Clone, Copy)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub level: usize,
}

impl Anchor {
    pub fn to_box(&self) -> BBox {
        BBox {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }
}

/// One detection: class, confidence, box (clipped to image bounds on
/// output).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDetection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Anchor layout shared by assignment and decoding: per level, anchors are
/// enumerated scale-major then row-major over the grid, matching the head's
/// channel layout `[a*K + k, y, x]`.
#[derive(Debug, Clone)]
pub struct AnchorLayout {
    /// (height, width) of each level's grid.
    pub grid: Vec<(usize, usize)>,
    /// All anchors, level by level.
    pub anchors: Vec<Anchor>,
    /// Start offset of each level in `anchors`.
    pub offsets: Vec<usize>,
    pub scales: Vec<f64>,
}

/// Base size is 4 x stride; three scales on a single 1:1 aspect ratio.
pub fn build_anchors(level_sizes: &[(usize, usize)], scales: &[f64]) -> AnchorLayout {
    let mut anchors = Vec::new();
    let mut offsets = Vec::new();
    for (li, &(h, w)) in level_sizes.iter().enumerate() {
        offsets.push(anchors.len());
        let stride = PyramidFeatures::stride(li) as f64;
        let base = 4.0 * stride;
        for &s in scales.iter() {
            for y in 0..h {
                for x in 0..w {
                    anchors.push(Anchor {
                        cx: (x as f64 + 0.5) * stride,
                        cy: (y as f64 + 0.5) * stride,
                        w: base * s,
                        h: base * s,
                        level: li,
                    });
                }
            }
        }
    }
    AnchorLayout {
        grid: level_sizes.to_vec(),
        anchors,
        offsets,
        scales: scales.to_vec(),
    }
}

/// Standard (dx, dy, dw, dh) encoding of a ground-truth box against an
/// anchor.
pub fn encode_box(anchor: &Anchor, gt: &BBox) -> [f64; 4] {
    let gw = gt.x2 - gt.x1;
    let gh = gt.y2 - gt.y1;
    let gx = gt.x1 + gw / 2.0;
    let gy = gt.y1 + gh / 2.0;
    [
        (gx - anchor.cx) / anchor.w,
        (gy - anchor.cy) / anchor.h,
        libm::log(gw / anchor.w),
        libm::log(gh / anchor.h),
    ]
}

pub fn decode_box(anchor: &Anchor, deltas: [f64; 4]) -> BBox {
    let cx = anchor.cx + deltas[0] * anchor.w;
    let cy = anchor.cy + deltas[1] * anchor.h;
    let w = anchor.w * libm::exp(deltas[2]);
    let h = anchor.h * libm::exp(deltas[3]);
    BBox {
        x1: cx - w / 2.0,
        y1: cy - h / 2.0,
        x2: cx + w / 2.0,
        y2: cy + h / 2.0,
    }
}

/// Per-batch assignment in the head's tensor layout.
pub struct Assignment<T> {
    /// Per level: class targets for `[N, A*K, H, W]`, -1 = ignore.
    pub cls_targets: Vec<Vec<i8>>,
    /// Per level: regression targets for `[N, A*4, H, W]`.
    pub reg_targets: Vec<Vec<T>>,
    /// Per level: true on all four delta channels of positive anchors.
    pub reg_mask: Vec<Vec<bool>>,
    pub num_pos: usize,
}

/// Anchors with IoU >= pos_thr are positive, < neg_thr negative, the rest
/// ignored; every ground-truth box forces its best anchor positive (ties
/// broken by lower anchor index).
pub fn assign_targets<T: Scalar>(
    layout: &AnchorLayout,
    gts_per_image: &[Vec<GtBox>],
    num_classes: usize,
    pos_thr: f64,
    neg_thr: f64,
) -> Assignment<T> {
    let batch = gts_per_image.len();
    let num_scales = layout.scales.len();
    let mut cls_targets = Vec::new();
    let mut reg_targets = Vec::new();
    let mut reg_mask = Vec::new();
    for &(h, w) in &layout.grid {
        cls_targets.push(vec![0i8; batch * num_scales * num_classes * h * w]);
        reg_targets.push(vec![T::ZERO; batch * num_scales * 4 * h * w]);
        reg_mask.push(vec![false; batch * num_scales * 4 * h * w]);
    }
    let mut num_pos = 0usize;

    for (n, gts) in gts_per_image.iter().enumerate() {
        // per-anchor best gt
        let mut best_iou = vec![0.0f64; layout.anchors.len()];
        let mut best_gt = vec![usize::MAX; layout.anchors.len()];
        // per-gt best anchor (forced positive)
        let mut gt_best_anchor = vec![usize::MAX; gts.len()];
        let mut gt_best_iou = vec![-1.0f64; gts.len()];
        for (ai, anchor) in layout.anchors.iter().enumerate() {
            let abox = anchor.to_box();
            for (gi, gt) in gts.iter().enumerate() {
                let v = iou(&abox, &gt.bbox);
                if v > best_iou[ai] || (v == best_iou[ai] && best_gt[ai] == usize::MAX && v > 0.0) {
                    best_iou[ai] = v;
                    best_gt[ai] = gi;
                }
                if v > gt_best_iou[gi] {
                    gt_best_iou[gi] = v;
                    gt_best_anchor[gi] = ai;
                }
            }
        }

        #[derive(Clone, Copy, PartialEq)]
        enum Label {
            Neg,
            Ignore,
            Pos(usize),
        }
        let mut labels = vec![Label::Neg; layout.anchors.len()];
        for ai in 0..layout.anchors.len() {
            if best_gt[ai] != usize::MAX && best_iou[ai] >= pos_thr {
                labels[ai] = Label::Pos(best_gt[ai]);
            } else if best_iou[ai] >= neg_thr {
                labels[ai] = Label::Ignore;
            }
        }
        for (gi, &ai) in gt_best_anchor.iter().enumerate() {
            if ai != usize::MAX {
                labels[ai] = Label::Pos(gi);
            }
        }

        for (li, &(h, w)) in layout.grid.iter().enumerate() {
            let hw = h * w;
            let level_len = num_scales * hw;
            for local in 0..level_len {
                let ai = layout.offsets[li] + local;
                let scale_idx = local / hw;
                let cell = local % hw;
                match labels[ai] {
                    Label::Neg => {}
                    Label::Ignore => {
                        for k in 0..num_classes {
                            let idx =
                                ((n * num_scales * num_classes) + scale_idx * num_classes + k) * hw
                                    + cell;
                            cls_targets[li][idx] = -1;
                        }
                    }
                    Label::Pos(gi) => {
                        num_pos += 1;
                        let gt = &gts[gi];
                        for k in 0..num_classes {
                            let idx =
                                ((n * num_scales * num_classes) + scale_idx * num_classes + k) * hw
                                    + cell;
                            cls_targets[li][idx] = (k == gt.class_id) as i8;
                        }
                        let deltas = encode_box(&layout.anchors[ai], &gt.bbox);
                        for (d, &dv) in deltas.iter().enumerate() {
                            let idx = ((n * num_scales * 4) + scale_idx * 4 + d) * hw + cell;
                            reg_targets[li][idx] = T::from_f64(dv);
                            reg_mask[li][idx] = true;
                        }
                    }
                }
            }
        }
    }

    Assignment {
        cls_targets,
        reg_targets,
        reg_mask,
        num_pos,
    }
}

/// Shared-weight head: a small 3x3 conv tower, then parallel 3x3 convs for
/// `A*K` class logits and `A*4` box deltas per location.
pub struct DetectionHead<T> {
    tower: Vec<Conv2d<T>>,
    cls: Conv2d<T>,
    reg: Conv2d<T>,
    pub num_classes: usize,
    pub num_scales: usize,
}

impl<T: Scalar> DetectionHead<T> {
    pub fn new(
        rng: &mut Rng,
        channels: usize,
        num_classes: usize,
        num_scales: usize,
        tower_depth: usize,
    ) -> Self {
        // narrow gaussian init keeps initial logits close to the prior
        // bias; the unnormalized pyramid features would otherwise swing
        // them far enough to blow up the focal term
        let narrow = |conv: &mut Conv2d<T>, rng: &mut Rng| {
            for v in conv.weight.value.data_mut() {
                *v = T::from_f64(rng.normal() * 0.01);
            }
        };
        let mut tower: Vec<Conv2d<T>> = (0..tower_depth)
            .map(|i| Conv2d::new(&format!("head.tower{i}"), rng, channels, channels, 3, 1, 1, true))
            .collect();
        for conv in tower.iter_mut() {
            narrow(conv, rng);
        }
        let mut cls = Conv2d::new(
            "head.cls",
            rng,
            channels,
            num_scales * num_classes,
            3,
            1,
            1,
            true,
        );
        narrow(&mut cls, rng);
        // bias so initial foreground probability is PRIOR_PROB
        let prior_bias = -libm::log((1.0 - PRIOR_PROB) / PRIOR_PROB);
        for v in cls.bias.as_mut().unwrap().value.data_mut() {
            *v = T::from_f64(prior_bias);
        }
        let mut reg = Conv2d::new("head.reg", rng, channels, num_scales * 4, 3, 1, 1, true);
        narrow(&mut reg, rng);
        DetectionHead {
            tower,
            cls,
            reg,
            num_classes,
            num_scales,
        }
    }

    /// Per-level (class logits, box deltas).
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        feats: &PyramidFeatures,
    ) -> CoreResult<Vec<(NodeId, NodeId)>> {
        let mut out = Vec::new();
        for &level in feats.levels.iter() {
            let mut x = level;
            for conv in self.tower.iter() {
                x = conv.forward(tape, x)?;
                x = tape.relu(x);
            }
            let cls = self.cls.forward(tape, x)?;
            let reg = self.reg.forward(tape, x)?;
            out.push((cls, reg));
        }
        Ok(out)
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter<T>>) {
        for c in self.tower.iter_mut() {
            c.collect_params(out);
        }
        self.cls.collect_params(out);
        self.reg.collect_params(out);
    }

    pub fn collect_state<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for c in self.tower.iter_mut() {
            c.collect_state(out);
        }
        self.cls.collect_state(out);
        self.reg.collect_state(out);
    }
}

/// Focal + smooth-L1 detection loss, normalized by the positive count
/// (minimum 1). The head outputs must share a tape with this call; the
/// tower's parameters are shared across levels, so losses are summed per
/// level and scaled once.
pub fn detection_loss<T: Scalar>(
    tape: &mut Tape<T>,
    head_out: &[(NodeId, NodeId)],
    assignment: &Assignment<T>,
) -> CoreResult<NodeId> {
    let mut total: Option<NodeId> = None;
    for (li, &(cls, reg)) in head_out.iter().enumerate() {
        let f = tape.focal_loss_sum(
            cls,
            assignment.cls_targets[li].clone(),
            FOCAL_ALPHA,
            FOCAL_GAMMA,
        )?;
        let r = tape.smooth_l1_sum(
            reg,
            assignment.reg_targets[li].clone(),
            assignment.reg_mask[li].clone(),
            SMOOTH_L1_BETA,
        )?;
        let lvl = tape.add(f, r)?;
        total = Some(match total {
            Some(t) => tape.add(t, lvl)?,
            None => lvl,
        });
    }
    let norm = T::from_f64(1.0 / assignment.num_pos.max(1) as f64);
    Ok(tape.scale(total.expect("at least one level"), norm))
}

/// Per-class greedy NMS by descending score; ties broken by lower anchor
/// index, making the kept set independent of input order.
pub fn decode_and_nms<T: Scalar>(
    cls_per_level: &[&Tensor<T>],
    reg_per_level: &[&Tensor<T>],
    layout: &AnchorLayout,
    num_classes: usize,
    image_w: f64,
    image_h: f64,
    score_thr: f64,
    iou_thr: f64,
    max_det: usize,
) -> Vec<Vec<BoxDetection>> {
    let batch = cls_per_level[0].shape()[0];
    let num_scales = layout.scales.len();
    let mut out = Vec::with_capacity(batch);
    for n in 0..batch {
        // candidate list: (score, class, anchor index, box)
        let mut cands: Vec<(f64, usize, usize, BBox)> = Vec::new();
        for (li, (cls, reg)) in cls_per_level.iter().zip(reg_per_level).enumerate() {
            let (h, w) = layout.grid[li];
            let hw = h * w;
            for a in 0..num_scales {
                for cell in 0..hw {
                    let ai = layout.offsets[li] + a * hw + cell;
                    let mut deltas = [0.0f64; 4];
                    for (d, dv) in deltas.iter_mut().enumerate() {
                        *dv = reg.data()[((n * num_scales * 4) + a * 4 + d) * hw + cell].to_f64();
                    }
                    for k in 0..num_classes {
                        let z = cls.data()
                            [((n * num_scales * num_classes) + a * num_classes + k) * hw + cell];
                        let score = sigmoid(z.to_f64());
                        if score < score_thr {
                            continue;
                        }
                        let mut bb = decode_box(&layout.anchors[ai], deltas);
                        bb.x1 = bb.x1.clamp(0.0, image_w);
                        bb.y1 = bb.y1.clamp(0.0, image_h);
                        bb.x2 = bb.x2.clamp(0.0, image_w);
                        bb.y2 = bb.y2.clamp(0.0, image_h);
                        if bb.x2 <= bb.x1 || bb.y2 <= bb.y1 {
                            continue;
                        }
                        cands.push((score, k, ai, bb));
                    }
                }
            }
        }
        let mut kept = nms(&mut cands, iou_thr);
        kept.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        kept.truncate(max_det);
        out.push(
            kept.into_iter()
                .map(|(score, class_id, _, bbox)| BoxDetection {
                    class_id,
                    score,
                    bbox,
                })
                .collect(),
        );
    }
    out
}

/// Greedy suppression within each class over (score, class, anchor index,
/// box) candidates; priority is score descending with ties broken by the
/// lower anchor index.
pub fn nms(cands: &mut [(f64, usize, usize, BBox)], iou_thr: f64) -> Vec<(f64, usize, usize, BBox)> {
    // deterministic priority: score desc, then anchor index asc
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)));
    let mut kept: Vec<(f64, usize, usize, BBox)> = Vec::new();
    'outer: for c in cands.iter() {
        for k in kept.iter() {
            if k.1 == c.1 && iou(&k.3, &c.3) > iou_thr {
                continue 'outer;
            }
        }
        kept.push(*c);
    }
    kept
}

/// Result of mAP evaluation. Classes without ground truth are skipped in
/// the mean.
#[derive(Debug, Clone)]
pub struct MapResult {
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// VOC-style evaluation: greedy matching highest-score-first (one match
/// per ground-truth box, IoU >= thr), then the area under the
/// monotone-envelope precision-recall curve, averaged over classes.
pub fn evaluate_map(
    detections: &[(usize, BoxDetection)],
    ground_truth: &[(usize, GtBox)],
    iou_thr: f64,
    num_classes: usize,
) -> CoreResult<MapResult> {
    for (_, d) in detections {
        if d.class_id >= num_classes {
            return Err(CoreError::InvalidArg {
                op: "evaluate_map",
                what: format!("unknown class id {}", d.class_id),
            });
        }
    }
    for (_, g) in ground_truth {
        if g.class_id >= num_classes {
            return Err(CoreError::InvalidArg {
                op: "evaluate_map",
                what: format!("unknown class id {}", g.class_id),
            });
        }
    }

    let mut per_class = vec![None; num_classes];
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..num_classes {
        let gts: Vec<(usize, &GtBox)> = ground_truth
            .iter()
            .filter(|(_, g)| g.class_id == k)
            .map(|(im, g)| (*im, g))
            .collect();
        if gts.is_empty() {
            continue;
        }
        let mut dets: Vec<(usize, usize, &BoxDetection)> = detections
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| d.class_id == k)
            .map(|(i, (im, d))| (*im, i, d))
            .collect();
        // score desc, stable on insertion order for ties
        dets.sort_by(|a, b| b.2.score.partial_cmp(&a.2.score).unwrap().then(a.1.cmp(&b.1)));

        let mut matched = vec![false; gts.len()];
        let mut tp = vec![false; dets.len()];
        for (di, (im, _, d)) in dets.iter().enumerate() {
            let mut best = (usize::MAX, iou_thr);
            for (gi, (gim, g)) in gts.iter().enumerate() {
                if *gim != *im || matched[gi] {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= best.1 && (best.0 == usize::MAX || v > best.1) {
                    best = (gi, v);
                }
            }
            if best.0 != usize::MAX {
                matched[best.0] = true;
                tp[di] = true;
            }
        }

        // precision-recall curve, then all-point interpolated area
        let npos = gts.len() as f64;
        let mut tp_cum = 0.0f64;
        let mut fp_cum = 0.0f64;
        let mut precision = Vec::with_capacity(dets.len());
        let mut recall = Vec::with_capacity(dets.len());
        for &is_tp in &tp {
            if is_tp {
                tp_cum += 1.0;
            } else {
                fp_cum += 1.0;
            }
            precision.push(tp_cum / (tp_cum + fp_cum));
            recall.push(tp_cum / npos);
        }
        let ap = ap_from_pr(&precision, &recall);
        per_class[k] = Some(ap);
        sum += ap;
        counted += 1;
    }
    let map = if counted == 0 { 0.0 } else { sum / counted as f64 };
    Ok(MapResult { per_class, map })
}

/// Area under the precision envelope: sum over recall steps of
/// (r_i - r_{i-1}) * max precision at recall >= r_i.
fn ap_from_pr(precision: &[f64], recall: &[f64]) -> f64 {
    if precision.is_empty() {
        return 0.0;
    }
    // monotone envelope from the right
    let mut env = precision.to_vec();
    for i in (0..env.len() - 1).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..env.len() {
        let r = recall[i];
        if r > prev_r {
            ap += (r - prev_r) * env[i];
            prev_r = r;
        }
    }
    ap
}
