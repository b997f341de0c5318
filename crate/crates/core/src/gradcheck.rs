//! The gradient-check suite: every differentiable op plus the end-to-end
//! detection loss, all in the 64-bit shadow mode.
//!
//! Scalar activations are checked at 10 seeded random points away from
//! their kinks; tensor ops on small random instances with every
//! coordinate perturbed; the end-to-end checks sample a few coordinates
//! per parameter tensor so the whole suite stays fast.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::detect::{assign_targets, detection_loss, BBox, GtBox, NEG_IOU_THR, POS_IOU_THR};
use crate::error::CoreResult;
use crate::model::{Detector, ModelConfig};
use crate::rng::Rng;
use crate::spectral::FourierUnit;
use crate::tape::{finite_diff_check, Mode};
use crate::tensor::Tensor;

pub const TOL_SCALAR: f64 = 1e-6;
pub const TOL_OP: f64 = 1e-5;
pub const TOL_END_TO_END: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-4;
/// Checked losses are scaled down so coordinates whose true gradient is
/// below what central differences can resolve fall under the 1e-8
/// absolute floor of the relative-error formula.
pub const LOSS_SCALE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
    pub worst: Option<(String, usize)>,
    pub worst_values: (f64, f64),
}

fn random_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.range(-1.0, 1.0))
}

/// Random values bounded away from zero, for kinked activations.
fn random_tensor_off_kink(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v = rng.range(0.05, 1.0);
        if rng.uniform() < 0.5 {
            -v
        } else {
            v
        }
    })
}

fn report_of(name: &str, r: &crate::tape::GradCheckResult, threshold: f64) -> OpReport {
    OpReport {
        name: String::from(name),
        max_rel_error: r.max_rel_error,
        threshold,
        passed: r.nan_failure.is_none() && r.max_rel_error < threshold,
        worst: r.worst.clone(),
        worst_values: r.worst_values,
    }
}

/// Run the whole suite. `seed` fixes the sampled instances.
pub fn grad_check_suite(config: &ModelConfig, seed: u64) -> CoreResult<Vec<OpReport>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // relu at 10 random points away from the kink
    let x = random_tensor_off_kink([1, 1, 2, 5], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 1, |tape, ids| {
        let y = tape.relu(ids[0]);
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("relu", &r, TOL_SCALAR));

    // sigmoid at 10 random points
    let x = random_tensor([1, 1, 2, 5], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 2, |tape, ids| {
        let y = tape.sigmoid(ids[0]);
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("sigmoid", &r, TOL_SCALAR));

    // elementwise add
    let a = random_tensor([1, 2, 3, 3], &mut rng);
    let b = random_tensor([1, 2, 3, 3], &mut rng);
    let r = finite_diff_check(&[("a", a), ("b", b)], FD_STEP, None, seed ^ 3, |tape, ids| {
        let y = tape.add(ids[0], ids[1])?;
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("elementwise_add", &r, TOL_SCALAR));

    // channel-gate broadcast multiply
    let g = random_tensor([2, 3, 1, 1], &mut rng);
    let x = random_tensor([2, 3, 4, 4], &mut rng);
    let r = finite_diff_check(&[("g", g), ("x", x)], FD_STEP, None, seed ^ 4, |tape, ids| {
        let y = tape.mul_gate(ids[0], ids[1])?;
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("elementwise_mul_broadcast", &r, TOL_SCALAR));

    // global average pool
    let x = random_tensor([2, 3, 4, 5], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 5, |tape, ids| {
        let y = tape.global_avg_pool(ids[0])?;
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("global_avg_pool", &r, TOL_SCALAR));

    // concat + split routing
    let a = random_tensor([1, 2, 3, 3], &mut rng);
    let b = random_tensor([1, 3, 3, 3], &mut rng);
    let r = finite_diff_check(&[("a", a), ("b", b)], FD_STEP, None, seed ^ 6, |tape, ids| {
        let y = tape.concat_channels(ids[0], ids[1])?;
        let (lo, hi) = tape.split_channels(y, 2)?;
        let lo = tape.sigmoid(lo);
        let hi = tape.sigmoid(hi);
        let (ls, hs) = (tape.sum_all(lo), tape.sum_all(hi));
        let two = tape.scale(hs, 2.0);
        let l = tape.add(ls, two)?;
        Ok(tape.scale(l, LOSS_SCALE))
    })?;
    out.push(report_of("concat_split", &r, TOL_SCALAR));

    // conv2d over the kernel/stride grid
    for &(k, stride) in &[(1usize, 1usize), (3, 1), (3, 2)] {
        let x = random_tensor([2, 3, 6, 6], &mut rng);
        let w = random_tensor([4, 3, k, k], &mut rng);
        let bias = random_tensor([1, 4, 1, 1], &mut rng);
        let r = finite_diff_check(
            &[("x", x), ("w", w), ("b", bias)],
            FD_STEP,
            None,
            seed ^ (10 + k as u64 + stride as u64),
            move |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), stride, k / 2)?;
                let y = tape.sigmoid(y);
                {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
            },
        )?;
        out.push(report_of(&format!("conv2d_k{k}_s{stride}"), &r, TOL_OP));
    }

    // batch norm, train stats
    let x = random_tensor([2, 3, 4, 4], &mut rng);
    let gamma = random_tensor([1, 3, 1, 1], &mut rng);
    let beta = random_tensor([1, 3, 1, 1], &mut rng);
    let r = finite_diff_check(
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        FD_STEP,
        None,
        seed ^ 20,
        |tape, ids| {
            let y = tape.batch_norm(ids[0], ids[1], ids[2], None, 0.1, 1e-5, Mode::Train)?;
            let y = tape.sigmoid(y);
            {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
        },
    )?;
    out.push(report_of("batch_norm_train", &r, TOL_OP));

    // batch norm, eval stats
    let x = random_tensor([2, 3, 4, 4], &mut rng);
    let gamma = random_tensor([1, 3, 1, 1], &mut rng);
    let beta = random_tensor([1, 3, 1, 1], &mut rng);
    let rm = random_tensor([1, 3, 1, 1], &mut rng);
    let rv = rm.map(|v| v.abs() + 0.5);
    let r = finite_diff_check(
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        FD_STEP,
        None,
        seed ^ 21,
        move |tape, ids| {
            let mut rm = rm.clone();
            let mut rv = rv.clone();
            let y = tape.batch_norm(
                ids[0],
                ids[1],
                ids[2],
                Some((&mut rm, &mut rv)),
                0.1,
                1e-5,
                Mode::Eval,
            )?;
            let y = tape.sigmoid(y);
            {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
        },
    )?;
    out.push(report_of("batch_norm_eval", &r, TOL_OP));

    // fft pair (backprop through both transforms)
    let x = random_tensor([1, 2, 4, 6], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 22, |tape, ids| {
        let spec = tape.rfft2(ids[0])?;
        let w = tape.value(spec).shape();
        let y = tape.irfft2(spec, 2 * (w[3] - 1))?;
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("rfft2_irfft2", &r, TOL_OP));

    // nearest upsample
    let x = random_tensor([1, 2, 3, 3], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 23, |tape, ids| {
        let y = tape.upsample_nearest2(ids[0]);
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("upsample_nearest2", &r, TOL_SCALAR));

    // pixel shuffle
    let x = random_tensor([1, 8, 3, 3], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 24, |tape, ids| {
        let y = tape.pixel_shuffle2(ids[0])?;
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("pixel_shuffle2", &r, TOL_SCALAR));

    // channel softmax
    let x = random_tensor([1, 5, 3, 3], &mut rng);
    let r = finite_diff_check(&[("x", x)], FD_STEP, None, seed ^ 25, |tape, ids| {
        let y = tape.softmax_channels(ids[0]);
        let y = tape.sigmoid(y);
        {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
    })?;
    out.push(report_of("softmax_channels", &r, TOL_SCALAR));

    // carafe reassembly (input and kernel paths)
    let x = random_tensor([1, 2, 3, 3], &mut rng);
    let kraw = random_tensor([1, 9, 6, 6], &mut rng);
    let r = finite_diff_check(
        &[("x", x), ("k", kraw)],
        FD_STEP,
        None,
        seed ^ 26,
        |tape, ids| {
            let k = tape.softmax_channels(ids[1]);
            let y = tape.carafe_reassemble(ids[0], k, 3)?;
            let y = tape.sigmoid(y);
            {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
        },
    )?;
    out.push(report_of("carafe_upsample", &r, TOL_OP));

    // focal loss
    let logits = random_tensor([1, 6, 2, 2], &mut rng).map(|v| v * 3.0);
    let targets: Vec<i8> = (0..24).map(|i| [(0i8), 1, -1][i % 3]).collect();
    let r = finite_diff_check(
        &[("z", logits)],
        FD_STEP,
        None,
        seed ^ 27,
        move |tape, ids| {
            let l = tape.focal_loss_sum(ids[0], targets.clone(), 0.25, 2.0)?;
            Ok(tape.scale(l, LOSS_SCALE))
        },
    )?;
    out.push(report_of("focal_loss", &r, TOL_OP));

    // smooth l1 (points away from the |d| = beta seam)
    let pred = random_tensor([1, 4, 2, 2], &mut rng);
    let targets: Vec<f64> = pred
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| if i % 2 == 0 { p - 0.5 } else { p - 0.01 })
        .collect();
    let mask: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
    let r = finite_diff_check(
        &[("p", pred)],
        FD_STEP,
        None,
        seed ^ 28,
        move |tape, ids| {
            let l = tape.smooth_l1_sum(ids[0], targets.clone(), mask.clone(), 1.0 / 9.0)?;
            Ok(tape.scale(l, LOSS_SCALE))
        },
    )?;
    out.push(report_of("smooth_l1", &r, TOL_OP));

    // the spectral unit end to end
    let fu = FourierUnit::<f64>::new("fu", 2);
    let mut wspec = fu.conv.weight.value.clone();
    for v in wspec.data_mut() {
        *v = rng.normal() * 0.3;
    }
    let x = random_tensor([1, 2, 4, 4], &mut rng);
    let gamma = Tensor::full([1, 4, 1, 1], 1.0);
    let beta = Tensor::full([1, 4, 1, 1], 0.7);
    let r = finite_diff_check(
        &[("x", x), ("w", wspec), ("gamma", gamma), ("beta", beta)],
        FD_STEP,
        None,
        seed ^ 29,
        |tape, ids| {
            let spec = tape.rfft2(ids[0])?;
            let z = tape.conv2d(spec, ids[1], None, 1, 0)?;
            let z = tape.batch_norm(z, ids[2], ids[3], None, 0.1, 1e-5, Mode::Train)?;
            let z = tape.relu(z);
            let w = tape.value(ids[0]).shape()[3];
            let y = tape.irfft2(z, w)?;
            let y = tape.add(y, ids[0])?;
            let y = tape.sigmoid(y);
            {
            let s = tape.sum_all(y);
            Ok(tape.scale(s, LOSS_SCALE))
        }
        },
    )?;
    out.push(report_of("fourier_unit", &r, TOL_SCALAR));

    // end-to-end detection loss, vanilla and spectral backbone
    for &(fu_on, label) in &[(false, "end_to_end_vanilla"), (true, "end_to_end_spectral")] {
        let r = model_loss_check(config, fu_on, seed ^ 30, &mut rng)?;
        out.push(report_of(label, &r, TOL_END_TO_END));
    }

    Ok(out)
}

/// Finite-difference check of the full detection loss against every
/// parameter tensor (a few sampled coordinates each).
fn model_loss_check(
    base: &ModelConfig,
    fu_enabled: bool,
    seed: u64,
    rng: &mut Rng,
) -> CoreResult<crate::tape::GradCheckResult> {
    let config = ModelConfig {
        fu_enabled,
        seed: seed ^ 0x5eed,
        ..base.clone()
    };
    // batch of two: batch-norm reductions stay non-degenerate on the
    // 1x1 top level
    let image = Tensor::from_fn([2, config.in_channels, 32, 32], |_, _, _, _| rng.range(0.0, 1.0));
    let gts = alloc::vec![
        alloc::vec![
            GtBox {
                bbox: BBox { x1: 6.0, y1: 8.0, x2: 14.0, y2: 15.0 },
                class_id: 1,
            },
            GtBox {
                bbox: BBox { x1: 20.0, y1: 18.0, x2: 27.0, y2: 26.0 },
                class_id: 0,
            },
        ],
        alloc::vec![GtBox {
            bbox: BBox { x1: 10.0, y1: 4.0, x2: 18.0, y2: 12.0 },
            class_id: 2,
        }],
    ];

    // parameter snapshot in a fixed order; nonzero spectral weights so the
    // frequency path carries gradient, and BN betas biased away from zero
    // so batch-normalized pre-activations do not sit on the ReLU kink
    // (finite differences there measure the kink, not the gradient)
    let mut proto = Detector::<f64>::new(config.clone())?;
    {
        let mut params = Vec::new();
        proto.collect_params(&mut params);
        for p in params {
            if p.name.contains(".fu.") && p.name.ends_with("conv.weight") {
                for v in p.value.data_mut() {
                    *v = rng.normal() * 0.1;
                }
            }
            // two-element reductions normalize to exactly +-1, so keep
            // beta +- gamma clear of zero
            if p.name.ends_with(".beta") {
                for v in p.value.data_mut() {
                    *v = 0.45;
                }
            }
            if p.name.ends_with(".gamma") {
                for v in p.value.data_mut() {
                    *v = 1.1;
                }
            }
        }
    }
    let mut named: Vec<(String, Tensor<f64>)> = Vec::new();
    {
        let mut params = Vec::new();
        proto.collect_params(&mut params);
        for p in params {
            named.push((p.name.clone(), p.value.clone()));
        }
    }
    let inputs: Vec<(&str, Tensor<f64>)> = named
        .iter()
        .map(|(n, t)| (n.as_str(), t.clone()))
        .collect();

    let cfg2 = config.clone();
    let image2 = image.clone();
    let check = finite_diff_check(&inputs, FD_STEP, Some(2), seed, move |tape, _ids| {
        // a fresh model with the tape's parameter values; tape.param
        // dedupes by name, so the graph wires through the checked nodes
        let mut model = Detector::<f64>::new(cfg2.clone())?;
        {
            let mut params = Vec::new();
            model.collect_params(&mut params);
            for p in params.iter_mut() {
                let node = tape
                    .param_nodes()
                    .iter()
                    .find(|(n, _)| n == &p.name)
                    .map(|(_, id)| *id)
                    .expect("all model params registered");
                p.value = tape.value(node).clone();
            }
        }
        let img = tape.leaf(image2.clone());
        let head_out = model.forward(tape, img, Mode::Train)?;
        let layout = {
            let sizes = model.level_sizes(32, 32);
            crate::detect::build_anchors(&sizes, &model.config.anchor_scales)
        };
        let assignment =
            assign_targets::<f64>(&layout, &gts, model.config.num_classes, POS_IOU_THR, NEG_IOU_THR);
        let loss = detection_loss(tape, &head_out, &assignment)?;
        Ok(tape.scale(loss, LOSS_SCALE))
    })?;
    Ok(check)
}
