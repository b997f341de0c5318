use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ffpf_cli::commands::{
    cmd_ablate, cmd_bench_fft, cmd_eval, cmd_gen_data, cmd_grad_check, cmd_train, TrainArgs,
};

/// Frequency-aware feature pyramid detector: dataset generation, training,
/// ablation, evaluation, and verification harnesses. FFPF_THREADS caps
/// parallelism (default 1 for fully deterministic runs).
#[derive(Parser)]
#[command(name = "ffpf", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic small-object dataset (PPM + JSONL annotations).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train a detector and write a checkpoint plus a metrics log.
    Train {
        /// Dataset directory (or a root with train/ and test/ splits).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Disable the spectral units in the backbone.
        #[arg(long)]
        no_fu: bool,
        /// Use the plain pyramid instead of the bilateral one.
        #[arg(long)]
        no_bsfpn: bool,
    },
    /// Evaluate a checkpoint (AP@0.5 per class and mAP).
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also dump detections, one line each:
        /// image_id class_id score x1 y1 x2 y2
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Train the four-way component ablation and write the table.
    Ablate {
        /// Root with train/ and test/ subdirectories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient checks over every op and the full loss.
    GradCheck {
        #[arg(long, default_value = "tiny")]
        config: String,
    },
    /// Round-trip timing and accuracy of the 2-D real FFT.
    BenchFft {
        #[arg(long, default_value = "8,16,32,64")]
        sizes: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData { out, n, seed, size } => cmd_gen_data(&out, n, seed, size).map(|_| 0),
        Cmd::Train {
            data,
            out,
            epochs,
            lr,
            seed,
            batch,
            no_fu,
            no_bsfpn,
        } => cmd_train(
            &data,
            &out,
            &TrainArgs {
                epochs,
                lr,
                seed,
                batch,
                no_fu,
                no_bsfpn,
            },
        )
        .map(|_| 0),
        Cmd::Eval { data, ckpt, dump } => cmd_eval(&data, &ckpt, dump.as_deref()).map(|_| 0),
        Cmd::Ablate {
            data,
            out,
            epochs,
            seed,
        } => cmd_ablate(&data, &out, epochs, seed).map(|_| 0),
        Cmd::GradCheck { config } => cmd_grad_check(&config),
        Cmd::BenchFft { sizes } => cmd_bench_fft(&sizes).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
