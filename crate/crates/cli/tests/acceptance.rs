//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line (visible with `--nocapture`). Tolerances and budgets are pinned
//! here in code.
//!
//! The desk-scale detection scores of the four-way ablation were measured
//! once on the seeded default run and frozen below as regression bounds;
//! the suite re-runs the protocol and holds every row to them.

use std::f64::consts::PI;
use std::time::Instant;

use ffpf_core::detect::{iou, BBox, BoxDetection, GtBox};
use ffpf_core::fft::{self, half_width, ComplexSpectrum};
use ffpf_core::gradcheck::grad_check_suite;
use ffpf_core::layers::Conv2d;
use ffpf_core::model::{Detector, ModelConfig};
use ffpf_core::optim::lr_for_epoch;
use ffpf_core::rng::Rng;
use ffpf_core::spectral::FourierUnit;
use ffpf_core::tape::{Mode, Tape};
use ffpf_core::tensor::Tensor;
use ffpf_core::train::TrainConfig;

use ffpf_cli::commands::run_ablation;
use ffpf_cli::data::{generate_dataset, load_dataset, SceneSpec};

// ── frozen desk-scale regression bounds (first validated seeded run) ──
// measured AP@0.5 on 2000 train / 500 test, seeds 1/2, train seed 0:
//   baseline 0.8373, +spectral-backbone 0.8427,
//   +bilateral-fpn 0.8685, full 0.8781
const ROW_AP_FLOOR: [f64; 4] = [0.80, 0.80, 0.83, 0.84];
const ABLATION_BUDGET_S: f64 = 30.0 * 60.0;

fn pass(name: &str) {
    println!("PASS {name}");
}

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.range(-1.0, 1.0))
}

/// Direct O((HW)^2) double-sum DFT, written independently of the library
/// transform.
fn dft2_oracle(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for j in 0..h {
                for k in 0..w {
                    let ang =
                        -2.0 * PI * ((u * j) as f64 / h as f64 + (v * k) as f64 / w as f64);
                    sr += x[j * w + k] * ang.cos();
                    si += x[j * w + k] * ang.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

#[test]
fn criterion_1_fft_correctness() {
    let started = Instant::now();
    // direct DFT oracle on every size up to 16x16
    for h in 1..=16usize {
        for w in 1..=16usize {
            let x = random_tensor([1, 1, h, w], (h * 37 + w) as u64);
            let s = fft::rfft2(&x).unwrap();
            let (ore, oim) = dft2_oracle(x.plane(0, 0), h, w);
            for u in 0..h {
                for v in 0..half_width(w) {
                    assert!(
                        (s.real.at(0, 0, u, v) - ore[u * w + v]).abs() < 1e-4,
                        "re h={h} w={w} ({u},{v})"
                    );
                    assert!(
                        (s.imag.at(0, 0, u, v) - oim[u * w + v]).abs() < 1e-4,
                        "im h={h} w={w} ({u},{v})"
                    );
                }
            }
        }
    }
    // round trip and Parseval on a spread of sizes
    for &(h, w) in &[(8usize, 8usize), (16, 16), (6, 10), (5, 7), (12, 4), (1, 16)] {
        let x = random_tensor([2, 2, h, w], (h * 100 + w) as u64);
        let s = fft::rfft2(&x).unwrap();
        let back = fft::irfft2(&s).unwrap();
        assert!(x.max_abs_diff(&back) < 1e-5, "round trip h={h} w={w}");

        let wf = half_width(w);
        for n in 0..2 {
            for c in 0..2 {
                let spatial: f64 = x.plane(n, c).iter().map(|v| v * v).sum();
                let mut spectral = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        let (re, im) = if v < wf {
                            (s.real.at(n, c, u, v), s.imag.at(n, c, u, v))
                        } else {
                            let u2 = (h - u) % h;
                            (s.real.at(n, c, u2, w - v), -s.imag.at(n, c, u2, w - v))
                        };
                        spectral += re * re + im * im;
                    }
                }
                let rel = (spatial - spectral / (h * w) as f64).abs() / spatial;
                assert!(rel < 1e-5, "parseval h={h} w={w}: {rel}");
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1} s (budget 10 s)");
    pass(&format!("criterion 1: fft correctness ({elapsed:.1} s)"));
}

#[test]
fn criterion_2_convolution_theorem() {
    // pointwise multiply of half spectra == brute-force circular
    // convolution, on several 8x8 instances
    for seed in 0..5u64 {
        let (h, w) = (8usize, 8usize);
        let x = random_tensor([1, 1, h, w], 100 + seed);
        let k = random_tensor([1, 1, h, w], 200 + seed);
        let mut direct = vec![0.0f64; h * w];
        for m in 0..h {
            for n in 0..w {
                let mut acc = 0.0;
                for p in 0..h {
                    for q in 0..w {
                        acc += x.at(0, 0, p, q) * k.at(0, 0, (m + h - p) % h, (n + w - q) % w);
                    }
                }
                direct[m * w + n] = acc;
            }
        }
        let sx = fft::rfft2(&x).unwrap();
        let sk = fft::rfft2(&k).unwrap();
        let wf = half_width(w);
        let mut pre = Tensor::zeros([1, 1, h, wf]);
        let mut pim = Tensor::zeros([1, 1, h, wf]);
        for u in 0..h {
            for v in 0..wf {
                let (ar, ai) = (sx.real.at(0, 0, u, v), sx.imag.at(0, 0, u, v));
                let (br, bi) = (sk.real.at(0, 0, u, v), sk.imag.at(0, 0, u, v));
                pre.set(0, 0, u, v, ar * br - ai * bi);
                pim.set(0, 0, u, v, ar * bi + ai * br);
            }
        }
        let y = fft::irfft2(&ComplexSpectrum {
            real: pre,
            imag: pim,
            source_width: w,
        })
        .unwrap();
        for i in 0..h * w {
            assert!(
                (y.data()[i] - direct[i]).abs() < 1e-4,
                "seed {seed} index {i}"
            );
        }
    }
    pass("criterion 2: convolution-theorem oracle");
}

#[test]
fn criterion_3_gradient_suite() {
    let started = Instant::now();
    let reports = grad_check_suite(&ModelConfig::tiny(), 2024).unwrap();
    let mut failed = Vec::new();
    for r in &reports {
        if !r.passed {
            failed.push(format!("{} ({:.2e} vs {:.0e})", r.name, r.max_rel_error, r.threshold));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(failed.is_empty(), "failing checks: {failed:?}");
    assert!(
        reports.iter().any(|r| r.name == "end_to_end_spectral"),
        "spectral end-to-end entry missing"
    );
    assert!(elapsed < 120.0, "criterion 3 took {elapsed:.1} s (budget 120 s)");
    pass(&format!(
        "criterion 3: gradient suite, {} checks ({elapsed:.1} s)",
        reports.len()
    ));
}

#[test]
fn criterion_4_global_receptive_field() {
    let c = 8usize;
    let (h, w) = (16usize, 16usize);
    let x = random_tensor([1, c, h, w], 55);
    let mut bumped = x.clone();
    let (py, px) = (5usize, 9usize);
    let idx = bumped.index(0, 3, py, px);
    bumped.data_mut()[idx] += 1.0;

    // one spectral unit with nonzero weights: nearly every position moves
    let mut fu = FourierUnit::<f64>::new("fu", c);
    let mut rng = Rng::new(56);
    for v in fu.conv.weight.value.data_mut() {
        *v = rng.normal() * 0.2;
    }
    let run_fu = |fu: &mut FourierUnit<f64>, t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let id = tape.leaf(t.clone());
        let y = fu.forward(&mut tape, id, Mode::Eval).unwrap();
        tape.value(y).clone()
    };
    let base = run_fu(&mut fu, &x);
    let moved = run_fu(&mut fu, &bumped);
    let total = base.numel();
    let changed = base
        .data()
        .iter()
        .zip(moved.data())
        .filter(|(a, b)| (*a - *b).abs() > 1e-9)
        .count();
    assert!(
        changed as f64 >= 0.99 * total as f64,
        "spectral unit moved only {changed}/{total} positions"
    );

    // a plain 3x3 conv block: changes confined to the 3x3 window
    let mut rng = Rng::new(57);
    let conv = Conv2d::<f64>::new("plain", &mut rng, c, c, 3, 1, 1, true);
    let run_conv = |conv: &Conv2d<f64>, t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let id = tape.leaf(t.clone());
        let y = conv.forward(&mut tape, id).unwrap();
        let y = tape.relu(y);
        tape.value(y).clone()
    };
    let base = run_conv(&conv, &x);
    let moved = run_conv(&conv, &bumped);
    let mut outside = 0usize;
    let mut inside = 0usize;
    for cc in 0..c {
        for y in 0..h {
            for xx in 0..w {
                if (base.at(0, cc, y, xx) - moved.at(0, cc, y, xx)).abs() > 1e-12 {
                    let local = y.abs_diff(py) <= 1 && xx.abs_diff(px) <= 1;
                    if local {
                        inside += 1;
                    } else {
                        outside += 1;
                    }
                }
            }
        }
    }
    assert_eq!(outside, 0, "conv block leaked outside its 3x3 window");
    assert!(inside > 0, "conv block response missing entirely");
    pass(&format!(
        "criterion 4: global receptive field (spectral {changed}/{total} positions, conv window {inside} cells)"
    ));
}

#[test]
fn criterion_5_ablation_protocol() {
    // rows run two at a time; each row is single-threaded and seeded
    std::env::set_var("FFPF_THREADS", "2");
    let root = std::env::temp_dir().join("ffpf_acceptance_data");
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    let spec = SceneSpec::default();
    if !train_dir.join("annotations.jsonl").exists() {
        generate_dataset(&spec, 2000, 1, &train_dir).unwrap();
    }
    if !test_dir.join("annotations.jsonl").exists() {
        generate_dataset(&spec, 500, 2, &test_dir).unwrap();
    }
    let train_data = load_dataset(&train_dir).unwrap();
    let test_data = load_dataset(&test_dir).unwrap();
    assert_eq!((train_data.len(), test_data.len()), (2000, 500));

    let base = ModelConfig::default();
    let train_cfg = TrainConfig::default();
    let started = Instant::now();
    let outcome = run_ablation(&base, &train_cfg, &train_data, &test_data, true).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let aps: Vec<f64> = outcome.rows.iter().map(|r| r.ap50).collect();
    println!(
        "ablation rows: {}",
        outcome
            .rows
            .iter()
            .map(|r| format!("{} {:.4}", r.name, r.ap50))
            .collect::<Vec<_>>()
            .join(", ")
    );
    for (i, row) in outcome.rows.iter().enumerate() {
        assert!(
            row.ap50 >= 0.30,
            "row {} reached only {:.4} (< 0.30)",
            row.name,
            row.ap50
        );
        assert!(
            row.ap50 >= ROW_AP_FLOOR[i],
            "row {} regressed: {:.4} < frozen floor {:.2}",
            row.name,
            row.ap50,
            ROW_AP_FLOOR[i]
        );
    }
    assert!(
        aps[3] >= aps[0] - 0.02,
        "full row {:.4} fell more than 0.02 below baseline {:.4}",
        aps[3],
        aps[0]
    );

    // bit-reproducibility: retrain the baseline row from scratch with the
    // same seeds; its checkpoint bytes must match the first run exactly
    let (row0_again, mut model_again) = ffpf_core::train::ablate_row(
        0,
        &base,
        &train_cfg,
        &train_data,
        &test_data,
        |_| {},
    )
    .unwrap();
    assert_eq!(row0_again.ap50, outcome.rows[0].ap50);
    let tmp = std::env::temp_dir().join("ffpf_acceptance_repro.ckpt");
    let opt = ffpf_core::optim::Sgd::new(train_cfg.momentum, train_cfg.weight_decay);
    ffpf_cli::checkpoint::save_checkpoint(&tmp, &mut model_again, &opt, train_cfg.epochs).unwrap();
    let again = std::fs::read(&tmp).unwrap();
    let _ = std::fs::remove_file(&tmp);
    assert_eq!(
        again, outcome.checkpoints[0],
        "baseline row retrain is not bit-identical"
    );

    assert!(
        elapsed < ABLATION_BUDGET_S,
        "ablation took {:.0} s (budget {:.0} s)",
        elapsed,
        ABLATION_BUDGET_S
    );
    pass(&format!(
        "criterion 5: ablation protocol ({:.0} s, APs {})",
        elapsed,
        aps.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join("/")
    ));
}

#[test]
fn criterion_6_schedule_conformance() {
    for e in 1..=8 {
        assert_eq!(lr_for_epoch(0.01, 12, e), 0.01, "epoch {e}");
    }
    for e in 9..=11 {
        assert!(
            (lr_for_epoch(0.01, 12, e) - 0.001).abs() < 1e-15,
            "epoch {e}"
        );
    }
    assert!((lr_for_epoch(0.01, 12, 12) - 0.0001).abs() < 1e-15);
    pass("criterion 6: exact schedule conformance (0.01 / 0.001 / 0.0001)");
}

#[test]
fn criterion_7_deterministic_persistence() {
    use ffpf_cli::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
    let config = ModelConfig::tiny();
    let mut model = Detector::<f32>::new(config.clone()).unwrap();
    let forward = |model: &mut Detector<f32>| {
        let mut rng = Rng::new(3);
        let img = Tensor::from_fn([1, 3, 64, 64], |_, _, _, _| rng.uniform() as f32);
        let mut tape = Tape::new();
        let id = tape.leaf(img);
        let out = model.forward(&mut tape, id, Mode::Eval).unwrap();
        out.iter()
            .flat_map(|(c, r)| {
                tape.value(*c)
                    .data()
                    .iter()
                    .chain(tape.value(*r).data())
                    .copied()
                    .collect::<Vec<f32>>()
            })
            .collect::<Vec<f32>>()
    };
    let before = forward(&mut model);
    let path = std::env::temp_dir().join("ffpf_acceptance_ckpt.bin");
    let opt = ffpf_core::optim::Sgd::new(0.9, 1e-4);
    save_checkpoint(&path, &mut model, &opt, 12).unwrap();
    let (mut loaded, _, epoch) = load_checkpoint(&path, config.clone(), 0.9, 1e-4).unwrap();
    assert_eq!(epoch, 12);
    assert_eq!(before, forward(&mut loaded), "forward changed across save/load");

    // distinct rejections
    let good = std::fs::read(&path).unwrap();
    let mut bad = good.clone();
    bad[0] = b'Z';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&path, config.clone(), 0.9, 1e-4),
        Err(CheckpointError::BadMagic)
    ));
    let mut bad = good.clone();
    bad[5] = 7;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&path, config.clone(), 0.9, 1e-4),
        Err(CheckpointError::BadVersion(_))
    ));
    let mut bad = good.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&path, config.clone(), 0.9, 1e-4),
        Err(CheckpointError::ChecksumMismatch { .. })
    ));
    std::fs::write(&path, &good[..good.len() / 3]).unwrap();
    let truncated = match load_checkpoint(&path, config, 0.9, 1e-4) {
        Err(e) => e,
        Ok(_) => panic!("truncated file accepted"),
    };
    assert!(matches!(
        truncated,
        CheckpointError::Truncated | CheckpointError::ChecksumMismatch { .. }
    ));
    let _ = std::fs::remove_file(&path);
    pass("criterion 7: deterministic persistence + distinct rejection codes");
}

#[test]
fn criterion_8_detection_metric_oracles() {
    // NMS vs brute-force suppression on 1000 random instances
    let mut rng = Rng::new(88);
    for case in 0..1000 {
        let n = 5 + rng.below(45);
        let cands: Vec<(f64, usize, usize, BBox)> = (0..n)
            .map(|i| {
                let x1 = rng.range(0.0, 54.0);
                let y1 = rng.range(0.0, 54.0);
                (
                    rng.uniform(),
                    rng.below(3),
                    i,
                    BBox {
                        x1,
                        y1,
                        x2: x1 + rng.range(2.0, 16.0),
                        y2: y1 + rng.range(2.0, 16.0),
                    },
                )
            })
            .collect();
        // brute force
        let mut sorted = cands.clone();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)));
        let mut brute: Vec<&(f64, usize, usize, BBox)> = Vec::new();
        for c in &sorted {
            if !brute.iter().any(|k| k.1 == c.1 && iou(&k.3, &c.3) > 0.5) {
                brute.push(c);
            }
        }
        // library path
        let mut lib_input = cands.clone();
        let kept: Vec<usize> = ffpf_core::detect::nms(&mut lib_input, 0.5)
            .iter()
            .map(|c| c.2)
            .collect();
        let brute_ids: Vec<usize> = brute.iter().map(|c| c.2).collect();
        assert_eq!(kept, brute_ids, "case {case}");
    }

    // mAP vs a hand-computed PR area
    let g1 = BBox { x1: 0.0, y1: 0.0, x2: 10.0, y2: 10.0 };
    let g2 = BBox { x1: 20.0, y1: 20.0, x2: 30.0, y2: 30.0 };
    let far = BBox { x1: 50.0, y1: 50.0, x2: 60.0, y2: 60.0 };
    let gts = vec![
        (0usize, GtBox { bbox: g1, class_id: 0 }),
        (0, GtBox { bbox: g2, class_id: 0 }),
    ];
    let dets = vec![
        (0usize, BoxDetection { class_id: 0, score: 0.9, bbox: g1 }),
        (0, BoxDetection { class_id: 0, score: 0.8, bbox: far }),
        (0, BoxDetection { class_id: 0, score: 0.7, bbox: g2 }),
        (0, BoxDetection { class_id: 0, score: 0.6, bbox: far }),
    ];
    let res = ffpf_core::detect::evaluate_map(&dets, &gts, 0.5, 1).unwrap();
    // PR: (1, .5), (1/2, .5), (2/3, 1), (1/2, 1); envelope area = 5/6
    assert!((res.map - 5.0 / 6.0).abs() < 1e-6, "map {}", res.map);

    // two-class fixture: AP 1 and AP 1/2, mAP 3/4
    let gts = vec![
        (0usize, GtBox { bbox: g1, class_id: 0 }),
        (0, GtBox { bbox: g2, class_id: 1 }),
        (1, GtBox { bbox: g1, class_id: 1 }),
    ];
    let dets = vec![
        (0usize, BoxDetection { class_id: 0, score: 0.9, bbox: g1 }),
        (0, BoxDetection { class_id: 1, score: 0.8, bbox: g2 }),
        (1, BoxDetection { class_id: 1, score: 0.7, bbox: far }),
    ];
    let res = ffpf_core::detect::evaluate_map(&dets, &gts, 0.5, 2).unwrap();
    assert!((res.map - 0.75).abs() < 1e-6, "map {}", res.map);
    pass("criterion 8: detection metric oracles (1000 NMS cases, PR fixtures)");
}

