//! Subcommand implementations. Each command tracks the artifacts it writes
//! and removes them if it fails partway, so a nonzero exit never leaves
//! half-written outputs behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use snet::data::{
    ingest, load_image, load_split, read_manifest_csv, split, write_manifest_csv, Split,
    TARGET_SIZE,
};
use snet::error::Result;
use snet::gradcam::{gradcam_detailed, overlay, write_heatmap_csv, Target};
use snet::metrics::{
    confusion, metrics_json, report, roc_curve, write_roc_csv, write_roc_svg, write_table_csv,
    DEFAULT_THRESHOLD,
};
use snet::nn::{build_model, load_model, save_model, Model};
use snet::tensor::Tensor;
use snet::train::{benchmark_single_image, train, write_history_csv, EpochStats};

use crate::config::RunConfig;

/// Records written artifact paths; on failure the caller sweeps them away.
pub struct ArtifactSink {
    written: Vec<PathBuf>,
}

impl ArtifactSink {
    pub fn new() -> Self {
        Self {
            written: Vec::new(),
        }
    }

    fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        let file = File::create(path)?;
        self.written.push(path.to_path_buf());
        Ok(BufWriter::new(file))
    }

    fn track(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    /// Remove everything written so far. Best effort.
    pub fn remove_all(&self) {
        for path in &self.written {
            let _ = std::fs::remove_file(path);
        }
    }
}

pub fn cmd_train(cfg: &RunConfig, sink: &mut ArtifactSink) -> Result<()> {
    let arch = cfg.arch_id()?;
    std::fs::create_dir_all(&cfg.out)?;

    let manifest = split(ingest(&cfg.data)?, cfg.split_ratio, cfg.seed)?;
    eprintln!(
        "dataset: {} samples ({} train / {} test), {} non-image files skipped",
        manifest.len(),
        manifest.count_split(Split::Train),
        manifest.count_split(Split::Test),
        manifest.skipped,
    );

    let manifest_path = cfg.out.join("manifest.csv");
    let mut w = sink.create(&manifest_path)?;
    write_manifest_csv(&manifest, &mut w)?;
    w.flush()?;

    let model: Model<f32> = build_model(arch, cfg.seed);
    let train_cfg = cfg.train_config();
    let started = Instant::now();
    let (model, stats) = train(&manifest, model, &train_cfg, &cfg.augment_params())?;
    let wall = started.elapsed().as_secs_f64();
    for s in &stats {
        eprintln!(
            "epoch {:>3}: loss {:.4}  train_acc {:.4}  ({:.1}s)",
            s.epoch, s.loss, s.train_accuracy, s.seconds
        );
    }
    eprintln!("training wall clock: {wall:.1}s");

    // Under --deterministic the artifacts must be byte-identical across
    // runs, so the wall-clock column is suppressed there.
    let history_path = cfg.out.join("history.csv");
    let csv_stats: Vec<EpochStats> = if cfg.deterministic {
        stats
            .iter()
            .map(|s| EpochStats { seconds: 0.0, ..*s })
            .collect()
    } else {
        stats.clone()
    };
    let mut w = sink.create(&history_path)?;
    write_history_csv(&csv_stats, &mut w)?;
    w.flush()?;

    let ckpt_path = cfg.out.join("checkpoint.snet");
    sink.track(&ckpt_path);
    save_model(&model, &ckpt_path)?;

    let summary_path = cfg.out.join("summary.json");
    let summary = json!({
        "config": cfg,
        "seed": cfg.seed,
        "samples": {
            "total": manifest.len(),
            "train": manifest.count_split(Split::Train),
            "test": manifest.count_split(Split::Test),
        },
        "artifacts": {
            "checkpoint": "checkpoint.snet",
            "manifest": "manifest.csv",
            "history": "history.csv",
        },
    });
    let mut w = sink.create(&summary_path)?;
    writeln!(
        w,
        "{}",
        serde_json::to_string_pretty(&summary).expect("serializable")
    )?;
    w.flush()?;

    println!("{}", cfg.out.display());
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
    pub deterministic: bool,
}

pub fn cmd_eval(args: &EvalArgs, sink: &mut ArtifactSink) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let manifest = read_manifest_csv(BufReader::new(File::open(&args.manifest)?))?;
    std::fs::create_dir_all(&args.out)?;

    let data = load_split::<f32>(&manifest, Split::Test, TARGET_SIZE)?;
    if data.is_empty() {
        return Err(snet::Error::EmptyDataset("manifest has no test samples"));
    }

    // Score in batches; accumulate forward-only time for the per-image column.
    let (c, h, w) = model.spec().input_shape;
    let mut scores: Vec<f32> = Vec::with_capacity(data.len());
    let mut forward_seconds = 0.0;
    for chunk in data.images.chunks(64) {
        let mut batch = Tensor::zeros([chunk.len(), c, h, w]);
        for (i, img) in chunk.iter().enumerate() {
            let len = c * h * w;
            batch.data_mut()[i * len..(i + 1) * len].copy_from_slice(img.data());
        }
        let t0 = Instant::now();
        scores.extend(model.score(&batch)?);
        forward_seconds += t0.elapsed().as_secs_f64();
    }
    let per_image_s = forward_seconds / data.len() as f64;

    let cm = confusion(&scores, &data.labels, DEFAULT_THRESHOLD)?;
    let rep = report(&cm)?;
    let curve = roc_curve(&scores, &data.labels)?;

    let metrics_path = args.out.join("metrics.json");
    let mut w = sink.create(&metrics_path)?;
    write!(w, "{}", metrics_json(&rep))?;
    w.flush()?;

    let training_time_s = match &args.history {
        Some(path) => Some(sum_history_seconds(path)?),
        None => None,
    };
    let row_path = args.out.join("metrics_row.csv");
    let mut w = sink.create(&row_path)?;
    // Timing columns vary run to run; deterministic mode leaves them empty.
    if args.deterministic {
        write_table_csv(&rep, None, None, &mut w)?;
    } else {
        write_table_csv(&rep, training_time_s, Some(per_image_s), &mut w)?;
    }
    w.flush()?;

    let roc_csv_path = args.out.join("roc.csv");
    let mut w = sink.create(&roc_csv_path)?;
    write_roc_csv(&curve, &mut w)?;
    w.flush()?;

    let roc_svg_path = args.out.join("roc.svg");
    let mut w = sink.create(&roc_svg_path)?;
    write_roc_svg(&curve, &mut w)?;
    w.flush()?;

    println!(
        "{}",
        json!({
            "accuracy": rep.accuracy,
            "sensitivity": rep.sensitivity,
            "specificity": rep.specificity,
            "precision": rep.precision,
            "f1": rep.f1,
            "mcc": rep.mcc,
            "auc": curve.auc,
            "samples": data.len(),
        })
    );
    Ok(())
}

fn sum_history_seconds(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    let mut total = 0.0;
    for line in text.lines().skip(1) {
        if let Some(field) = line.rsplit(',').next() {
            total += field.parse::<f64>().unwrap_or(0.0);
        }
    }
    Ok(total)
}

pub fn cmd_predict(checkpoint: &Path, image_path: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let image = load_image::<f32>(image_path, TARGET_SIZE)?;
    let score = model.score(&image)?[0] as f64;
    let label = if score >= DEFAULT_THRESHOLD {
        "parasitized"
    } else {
        "uninfected"
    };
    // `probability` is the parasitized-class score from the sigmoid head.
    println!(
        "{}",
        json!({ "label": label, "probability": score, "image": image_path.display().to_string() })
    );
    Ok(())
}

pub fn cmd_gradcam(
    checkpoint: &Path,
    images: &[PathBuf],
    out: &Path,
    alpha: f64,
    sink: &mut ArtifactSink,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    std::fs::create_dir_all(out)?;
    for path in images {
        let image = load_image::<f32>(path, TARGET_SIZE)?;
        let score = model.score(&image)?[0] as f64;
        let target = if score >= DEFAULT_THRESHOLD {
            Target::Parasitized
        } else {
            Target::Uninfected
        };
        let detail = gradcam_detailed(&model, &image, target)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string());

        let png_path = out.join(format!("{stem}_cam.png"));
        let rendered = overlay(&detail.heatmap, &image, alpha)?;
        sink.track(&png_path);
        rendered
            .save(&png_path)
            .map_err(|e| snet::Error::Io(std::io::Error::other(e)))?;

        let csv_path = out.join(format!("{stem}_cam.csv"));
        let mut w = sink.create(&csv_path)?;
        write_heatmap_csv(&detail.heatmap, &mut w)?;
        w.flush()?;

        println!(
            "{}",
            json!({
                "image": path.display().to_string(),
                "label": if target == Target::Parasitized { "parasitized" } else { "uninfected" },
                "probability": score,
                "degenerate": detail.heatmap.degenerate,
                "overlay": png_path.display().to_string(),
                "values": csv_path.display().to_string(),
            })
        );
    }
    Ok(())
}

pub fn cmd_bench(
    checkpoint: &Path,
    image: Option<&Path>,
    warmup: usize,
    iters: usize,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let input = match image {
        Some(path) => load_image::<f32>(path, TARGET_SIZE)?,
        None => {
            // Deterministic synthetic input; latency is content-independent.
            let len = 3 * TARGET_SIZE * TARGET_SIZE;
            Tensor::from_vec(
                [1, 3, TARGET_SIZE, TARGET_SIZE],
                (0..len).map(|i| (i % 251) as f32 / 251.0).collect(),
            )?
        }
    };
    let stats = benchmark_single_image(&model, &input, warmup, iters)?;
    println!(
        "{}",
        json!({
            "arch": model.spec().arch.as_str(),
            "mean_s": stats.mean_s,
            "p50_s": stats.p50_s,
            "p95_s": stats.p95_s,
            "iters": stats.iters,
            "warmup": stats.warmup,
            "threads": 1,
        })
    );
    Ok(())
}
