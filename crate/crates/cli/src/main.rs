//! `snet` — train, evaluate, explain and benchmark shallow CNN classifiers
//! for segmented blood-cell images, from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{ArtifactSink, EvalArgs};
use config::{resolve, CliOverrides, FileConfig};
use snet::error::Error;

#[derive(Parser)]
#[command(name = "snet", version, about = "Shallow CNN malaria cell classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a dataset, train a model, and write checkpoint + reports.
    Train(TrainArgs),
    /// Score the test split of a manifest against a checkpoint.
    Eval(EvalCmd),
    /// Classify a single image, printing one JSON line.
    Predict(PredictCmd),
    /// Write Grad-CAM overlay PNG + raw CSV per input image.
    Gradcam(GradcamCmd),
    /// Measure single-image forward latency (single-threaded).
    Bench(BenchCmd),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file in key = value format; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing Parasitized/ and Uninfected/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Architecture: cnn1, cnn2 or cnn3.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Enable on-the-fly training-set augmentation.
    #[arg(long)]
    augment: bool,
    /// Seed for every random choice (init, split, shuffle, augmentation).
    #[arg(long)]
    seed: Option<u64>,
    /// Train fraction of the train/test split.
    #[arg(long)]
    split: Option<f64>,
    /// Output directory for checkpoint, manifest, history and summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for data and batch parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded numerics; artifacts become byte-reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest CSV written by `snet train`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "snet_out")]
    out: PathBuf,
    /// Optional history CSV; fills the training-time column of the report row.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    image: PathBuf,
}

#[derive(Args)]
struct GradcamCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "snet_out")]
    out: PathBuf,
    /// Overlay opacity in [0, 1].
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional real image; defaults to a deterministic synthetic input.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
}

/// Dataset-shape problems exit 2 (operator error); everything else exits 1.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::MissingClassDir(_)
        | Error::NoImages(_)
        | Error::InvalidConfig(_)
        | Error::BadSplitRatio(_) => 2,
        _ => 1,
    }
}

fn run_in_pool<F: FnOnce() -> snet::Result<()> + Send>(threads: usize, f: F) -> snet::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn dispatch(command: Command) -> snet::Result<()> {
    match command {
        Command::Train(args) => {
            let file = match &args.config {
                Some(path) => FileConfig::load(path)?,
                None => FileConfig::default(),
            };
            let cli = CliOverrides {
                data: args.data,
                arch: args.arch,
                epochs: args.epochs,
                batch: args.batch,
                lr: args.lr,
                augment: args.augment,
                seed: args.seed,
                split: args.split,
                out: args.out,
                threads: args.threads,
                deterministic: args.deterministic,
            };
            let cfg = resolve(file, cli)?;
            let mut sink = ArtifactSink::new();
            run_in_pool(cfg.effective_threads(), || {
                commands::cmd_train(&cfg, &mut sink)
            })
            .inspect_err(|_| sink.remove_all())
        }
        Command::Eval(args) => {
            let threads = if args.deterministic {
                1
            } else {
                args.threads.unwrap_or_else(|| {
                    std::thread::available_parallelism()
                        .map(|n| n.get())
                        .unwrap_or(1)
                })
            };
            let eval = EvalArgs {
                checkpoint: args.checkpoint,
                manifest: args.manifest,
                out: args.out,
                history: args.history,
                deterministic: args.deterministic,
            };
            let mut sink = ArtifactSink::new();
            run_in_pool(threads, || commands::cmd_eval(&eval, &mut sink))
                .inspect_err(|_| sink.remove_all())
        }
        Command::Predict(args) => commands::cmd_predict(&args.checkpoint, &args.image),
        Command::Gradcam(args) => {
            let mut sink = ArtifactSink::new();
            commands::cmd_gradcam(
                &args.checkpoint,
                &args.images,
                &args.out,
                args.alpha,
                &mut sink,
            )
            .inspect_err(|_| sink.remove_all())
        }
        Command::Bench(args) => run_in_pool(1, || {
            commands::cmd_bench(
                &args.checkpoint,
                args.image.as_deref(),
                args.warmup,
                args.iters,
            )
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
