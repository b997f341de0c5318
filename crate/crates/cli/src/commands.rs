//! Command implementations shared by the binary and the test suites.

use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ffpf_core::fft::{self, ComplexSpectrum};
use ffpf_core::gradcheck::grad_check_suite;
use ffpf_core::model::{Detector, ModelConfig};
use ffpf_core::optim::Sgd;
use ffpf_core::rng::Rng;
use ffpf_core::tensor::Tensor;
use ffpf_core::train::{
    ablate_row, evaluate_detector, train, AblationRow, Dataset, EpochLog, TrainConfig,
    ABLATION_ROWS,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{generate_dataset, load_dataset, resolve_splits, SceneSpec, CLASS_NAMES};
use crate::threads::{run_indexed, thread_limit};

pub type CmdResult<T> = Result<T, Box<dyn Error>>;

pub fn cmd_gen_data(out: &Path, n: usize, seed: u64, size: usize) -> CmdResult<()> {
    if n == 0 {
        return Err("--n must be positive".into());
    }
    let spec = SceneSpec {
        size,
        ..SceneSpec::default()
    };
    generate_dataset(&spec, n, seed, out)?;
    println!(
        "wrote {n} images ({size}x{size}) and annotations.jsonl to {}",
        out.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch: usize,
    pub no_fu: bool,
    pub no_bsfpn: bool,
}

pub fn cmd_train(data_dir: &Path, out: &Path, args: &TrainArgs) -> CmdResult<()> {
    let (train_dir, eval_dir) = resolve_splits(data_dir);
    let train_data = load_dataset(&train_dir)?;
    let eval_data = match &eval_dir {
        Some(d) => Some(load_dataset(d)?),
        None => None,
    };
    println!(
        "training on {} images{}",
        train_data.len(),
        eval_data
            .as_ref()
            .map(|d| format!(", evaluating on {}", d.len()))
            .unwrap_or_default()
    );

    let config = ModelConfig {
        fu_enabled: !args.no_fu,
        bs_fpn: !args.no_bsfpn,
        seed: args.seed,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.lr,
        batch_size: args.batch,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut model = Detector::new(config)?;
    let mut opt = Sgd::new(train_cfg.momentum, train_cfg.weight_decay);

    let metrics_path = out.with_extension("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)?;
    let result = train(
        &mut model,
        &train_data,
        eval_data.as_ref(),
        &train_cfg,
        &mut opt,
        |log| {
            println!(
                "epoch {:>2}  lr {:<7}  loss {:.4}  ap50 {:.4}",
                log.epoch, log.lr, log.mean_loss, log.ap50
            );
            let _ = writeln!(metrics, "{}", epoch_json(log));
        },
    )?;
    save_checkpoint(out, &mut model, &opt, result.logs.len())
        .map_err(|e| format!("saving checkpoint: {e}"))?;
    println!("checkpoint written to {}", out.display());
    println!("metrics log written to {}", metrics_path.display());
    Ok(())
}

fn epoch_json(log: &EpochLog) -> String {
    format!(
        "{{\"epoch\":{},\"lr\":{},\"loss\":{},\"ap50\":{}}}",
        log.epoch, log.lr, log.mean_loss, log.ap50
    )
}

pub fn cmd_eval(data_dir: &Path, ckpt: &Path, dump: Option<&Path>) -> CmdResult<()> {
    let (split, test) = resolve_splits(data_dir);
    let eval_dir = test.unwrap_or(split);
    let data = load_dataset(&eval_dir)?;

    // the checkpoint's config echo is authoritative; probe the toggles
    let (mut model, map_res) = load_with_toggles(ckpt)?;
    let result = evaluate_detector(&mut model, &data, 0)?;
    println!("evaluated {} images from {}", data.len(), eval_dir.display());
    for (k, ap) in result.per_class.iter().enumerate() {
        match ap {
            Some(v) => println!("  AP@0.5 {:<7} {v:.4}", CLASS_NAMES.get(k).unwrap_or(&"?")),
            None => println!("  AP@0.5 {:<7} (no ground truth)", CLASS_NAMES.get(k).unwrap_or(&"?")),
        }
    }
    println!("mAP@0.5 {:.4}", result.map);
    println!(
        "{{\"map\":{},\"per_class\":[{}]}}",
        result.map,
        result
            .per_class
            .iter()
            .map(|c| c.map(|v| v.to_string()).unwrap_or_else(|| "null".into()))
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = map_res;

    if let Some(path) = dump {
        let dets = collect_detections(&mut model, &data)?;
        let mut f = fs::File::create(path)?;
        for (image_id, d) in &dets {
            writeln!(f, "{}", detection_line(*image_id, d))?;
        }
        println!("wrote {} detections to {}", dets.len(), path.display());
    }
    Ok(())
}

/// One dump line: `image_id class_id score x1 y1 x2 y2`, floats with six
/// decimals.
pub fn detection_line(image_id: usize, d: &ffpf_core::detect::BoxDetection) -> String {
    format!(
        "{image_id} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
        d.class_id, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
    )
}

fn load_with_toggles(ckpt: &Path) -> CmdResult<(Detector<f32>, ())> {
    // try the four toggle combinations against the stored config echo
    let mut last = None;
    for (fu, bs) in [(true, true), (true, false), (false, true), (false, false)] {
        let config = ModelConfig {
            fu_enabled: fu,
            bs_fpn: bs,
            ..ModelConfig::default()
        };
        match load_checkpoint(ckpt, config, 0.9, 1e-4) {
            Ok((model, _, _)) => return Ok((model, ())),
            Err(e) => last = Some(e),
        }
    }
    Err(format!("loading checkpoint: {}", last.unwrap()).into())
}

pub fn collect_detections(
    model: &mut Detector<f32>,
    data: &Dataset,
) -> CmdResult<Vec<(usize, ffpf_core::detect::BoxDetection)>> {
    use ffpf_core::detect::decode_and_nms;
    use ffpf_core::tape::{Mode, Tape};
    let layout = ffpf_core::train::anchor_layout_for(model, data.size);
    let mut out = Vec::new();
    let batch = 16usize;
    let mut start = 0usize;
    while start < data.len() {
        let end = (start + batch).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let chw = data.channels * data.size * data.size;
        let mut buf = Vec::with_capacity(idx.len() * chw);
        for &i in &idx {
            buf.extend_from_slice(&data.images[i]);
        }
        let images = Tensor::from_vec([idx.len(), data.channels, data.size, data.size], buf)?;
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
            for d in per_image {
                out.push((start + bi, d));
            }
        }
        start = end;
    }
    Ok(out)
}

pub struct AblateOutcome {
    pub rows: Vec<AblationRow>,
    pub logs: Vec<Vec<EpochLog>>,
    /// Final checkpoint bytes per row, for reproducibility comparisons.
    pub checkpoints: Vec<Vec<u8>>,
}

/// Train the four ablation rows (identical seeds and data order) and
/// return the table. Rows run in parallel up to FFPF_THREADS.
pub fn run_ablation(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    quiet: bool,
) -> CmdResult<AblateOutcome> {
    let results = run_indexed(ABLATION_ROWS.len(), |row| {
        let mut logs = Vec::new();
        let out = ablate_row(row, base, train_cfg, train_data, test_data, |log| {
            if !quiet {
                println!(
                    "[{}] epoch {:>2}  lr {:<7}  loss {:.4}  ap50 {:.4}",
                    ABLATION_ROWS[row].0, log.epoch, log.lr, log.mean_loss, log.ap50
                );
            }
            logs.push(log.clone());
        });
        (out, logs)
    });
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    for (out, row_logs) in results {
        let (row, mut model) = out?;
        // serialize to an in-memory image via a temp file for byte-level
        // reproducibility checks
        let tmp = std::env::temp_dir().join(format!(
            "ffpf_ablate_{}_{}.ckpt",
            std::process::id(),
            row.name
        ));
        let opt = Sgd::new(train_cfg.momentum, train_cfg.weight_decay);
        save_checkpoint(&tmp, &mut model, &opt, train_cfg.epochs)
            .map_err(|e| format!("saving row checkpoint: {e}"))?;
        checkpoints.push(fs::read(&tmp)?);
        let _ = fs::remove_file(&tmp);
        rows.push(row);
        logs.push(row_logs);
    }
    Ok(AblateOutcome {
        rows,
        logs,
        checkpoints,
    })
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>9} {:>8} {:>8}", "configuration", "spectral", "bilateral", "AP@0.5");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>8} {:>8.4}",
            r.name,
            if r.fu { "yes" } else { "-" },
            if r.bs_fpn { "yes" } else { "-" },
            r.ap50
        );
    }
    s
}

pub fn ablation_jsonl(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{{\"row\":\"{}\",\"spectral\":{},\"bilateral\":{},\"ap50\":{}}}",
            r.name, r.fu, r.bs_fpn, r.ap50
        );
    }
    s
}

pub fn cmd_ablate(data_dir: &Path, out: &Path, epochs: usize, seed: u64) -> CmdResult<()> {
    let (train_dir, test_dir) = resolve_splits(data_dir);
    let test_dir = test_dir.ok_or("ablate expects DATA_DIR with train/ and test/ subdirectories")?;
    let train_data = load_dataset(&train_dir)?;
    let test_data = load_dataset(&test_dir)?;
    println!(
        "ablation on {} train / {} test images, {} thread(s)",
        train_data.len(),
        test_data.len(),
        thread_limit()
    );
    let base = ModelConfig {
        seed,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let outcome = run_ablation(&base, &train_cfg, &train_data, &test_data, false)?;
    let table = format_ablation_table(&outcome.rows);
    print!("{table}");
    println!("completed in {:.1} s", started.elapsed().as_secs_f64());
    fs::write(out, &table)?;
    fs::write(out.with_extension("jsonl"), ablation_jsonl(&outcome.rows))?;
    println!(
        "table written to {} (+ {})",
        out.display(),
        out.with_extension("jsonl").display()
    );
    Ok(())
}

pub fn cmd_grad_check(config_name: &str) -> CmdResult<i32> {
    let config = match config_name {
        "tiny" => ModelConfig::tiny(),
        "default" => ModelConfig::default(),
        other => return Err(format!("unknown config {other:?}; use tiny or default").into()),
    };
    let reports = grad_check_suite(&config, 2024)?;
    let mut all_ok = true;
    for r in &reports {
        println!(
            "{:<22} max rel err {:.3e}  tol {:.0e}  {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            if r.passed { "ok" } else { "FAIL" }
        );
        println!(
            "{{\"op\":\"{}\",\"max_rel_error\":{},\"threshold\":{},\"passed\":{}}}",
            r.name, r.max_rel_error, r.threshold, r.passed
        );
        all_ok &= r.passed;
    }
    Ok(if all_ok { 0 } else { 1 })
}

pub fn cmd_bench_fft(sizes: &str) -> CmdResult<()> {
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad --sizes list: {e}"))?;
    let mut rng = Rng::new(1);
    println!("{:>6} {:>12} {:>14} {:>12}", "size", "fwd+inv us", "round trip err", "mpix/s");
    for &s in &sizes {
        let x = Tensor::from_fn([1, 4, s, s], |_, _, _, _| rng.range(-1.0, 1.0) as f32);
        let iters = (2_000_000 / (s * s * 4)).clamp(3, 400);
        let mut worst = 0.0f64;
        let t = Instant::now();
        for _ in 0..iters {
            let spec: ComplexSpectrum<f32> = fft::rfft2(&x)?;
            let back = fft::irfft2(&spec)?;
            worst = worst.max(x.max_abs_diff(&back));
        }
        let dt = t.elapsed().as_secs_f64();
        let us = dt / iters as f64 * 1e6;
        let mpix = (iters * 4 * s * s) as f64 / dt / 1e6;
        println!("{s:>6} {us:>12.1} {worst:>14.3e} {mpix:>12.1}");
        println!(
            "{{\"size\":{s},\"fwd_inv_us\":{us},\"round_trip_err\":{worst},\"mpix_per_s\":{mpix}}}"
        );
    }
    Ok(())
}
