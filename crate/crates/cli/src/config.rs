//! Run configuration: defaults, config-file values, and command-line
//! overrides, resolved in that order (flags win).
//!
//! The config file is a plain `key = value` format, one pair per line,
//! `#` starts a comment. Recognized keys mirror the command-line flags plus
//! the augmentation magnitudes:
//!
//! ```text
//! data = /data/cells
//! arch = cnn3
//! epochs = 60
//! batch = 32
//! lr = 0.001
//! augment = true
//! seed = 7
//! split = 0.8
//! out = runs/cnn3
//! threads = 2
//! deterministic = false
//! rotation_max_deg = 20
//! zoom_lo = 0.9
//! zoom_hi = 1.1
//! hflip_prob = 0.5
//! vflip_prob = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;
use snet::data::AugmentParams;
use snet::error::{Error, Result};
use snet::nn::ArchId;
use snet::train::{Optimizer, TrainConfig};

/// Fully resolved run configuration, echoed verbatim into `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub arch: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub augment: bool,
    pub rotation_max_deg: f64,
    pub zoom_lo: f64,
    pub zoom_hi: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub seed: u64,
    pub split_ratio: f64,
    pub out: PathBuf,
    pub threads: usize,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn arch_id(&self) -> Result<ArchId> {
        ArchId::parse(&self.arch)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            augment: self.augment,
            seed: self.seed,
            shuffle_each_epoch: true,
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            rotation_max_deg: self.rotation_max_deg,
            zoom_range: (self.zoom_lo, self.zoom_hi),
            hflip_prob: self.hflip_prob,
            vflip_prob: self.vflip_prob,
        }
    }

    /// Effective rayon thread count: `--deterministic` forces 1.
    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch_id()?;
        self.train_config().validate()?;
        self.augment_params().validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }
}

/// Values parsed from a config file; every field optional.
#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub augment: Option<bool>,
    pub seed: Option<u64>,
    pub split: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    pub rotation_max_deg: Option<f64>,
    pub zoom_lo: Option<f64>,
    pub zoom_hi: Option<f64>,
    pub hflip_prob: Option<f64>,
    pub vflip_prob: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FileConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidConfig(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "data" => cfg.data = Some(PathBuf::from(value)),
                "arch" => cfg.arch = Some(value.to_string()),
                "epochs" => cfg.epochs = Some(value.parse().map_err(|_| bad("integer"))?),
                "batch" => cfg.batch = Some(value.parse().map_err(|_| bad("integer"))?),
                "lr" => cfg.lr = Some(value.parse().map_err(|_| bad("number"))?),
                "augment" => cfg.augment = Some(value.parse().map_err(|_| bad("boolean"))?),
                "seed" => cfg.seed = Some(value.parse().map_err(|_| bad("integer"))?),
                "split" => cfg.split = Some(value.parse().map_err(|_| bad("number"))?),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "threads" => cfg.threads = Some(value.parse().map_err(|_| bad("integer"))?),
                "deterministic" => {
                    cfg.deterministic = Some(value.parse().map_err(|_| bad("boolean"))?)
                }
                "rotation_max_deg" => {
                    cfg.rotation_max_deg = Some(value.parse().map_err(|_| bad("number"))?)
                }
                "zoom_lo" => cfg.zoom_lo = Some(value.parse().map_err(|_| bad("number"))?),
                "zoom_hi" => cfg.zoom_hi = Some(value.parse().map_err(|_| bad("number"))?),
                "hflip_prob" => cfg.hflip_prob = Some(value.parse().map_err(|_| bad("number"))?),
                "vflip_prob" => cfg.vflip_prob = Some(value.parse().map_err(|_| bad("number"))?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }
}

/// Command-line values for train; `None` means "not given on the line".
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub data: Option<PathBuf>,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub augment: bool,
    pub seed: Option<u64>,
    pub split: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub deterministic: bool,
}

/// Resolve defaults < config file < command line.
pub fn resolve(file: FileConfig, cli: CliOverrides) -> Result<RunConfig> {
    let defaults = TrainConfig::default();
    let aug = AugmentParams::default();
    let data = cli.data.or(file.data).ok_or_else(|| {
        Error::InvalidConfig("no dataset root: pass --data or set it in the config file".into())
    })?;
    let cfg = RunConfig {
        data,
        arch: cli.arch.or(file.arch).unwrap_or_else(|| "cnn3".to_string()),
        epochs: cli.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: cli.batch.or(file.batch).unwrap_or(defaults.batch_size),
        learning_rate: cli.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        optimizer: Optimizer::default(),
        augment: cli.augment || file.augment.unwrap_or(false),
        rotation_max_deg: file.rotation_max_deg.unwrap_or(aug.rotation_max_deg),
        zoom_lo: file.zoom_lo.unwrap_or(aug.zoom_range.0),
        zoom_hi: file.zoom_hi.unwrap_or(aug.zoom_range.1),
        hflip_prob: file.hflip_prob.unwrap_or(aug.hflip_prob),
        vflip_prob: file.vflip_prob.unwrap_or(aug.vflip_prob),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        split_ratio: cli.split.or(file.split).unwrap_or(0.8),
        out: cli
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("snet_out")),
        threads: cli.threads.or(file.threads).unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }),
        deterministic: cli.deterministic || file.deterministic.unwrap_or(false),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_apply_and_flags_override() {
        let file = FileConfig::parse(
            "data = /tmp/cells\narch = cnn1\nepochs = 5\n# comment\nzoom_hi = 1.2\n",
        )
        .unwrap();
        let cli = CliOverrides {
            arch: Some("cnn2".into()),
            ..Default::default()
        };
        let cfg = resolve(file, cli).unwrap();
        assert_eq!(cfg.arch, "cnn2"); // flag wins
        assert_eq!(cfg.epochs, 5); // file wins over default
        assert_eq!(cfg.zoom_hi, 1.2);
        assert_eq!(cfg.batch_size, 32); // default
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(FileConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn missing_data_root_is_an_error() {
        assert!(resolve(FileConfig::default(), CliOverrides::default()).is_err());
    }

    #[test]
    fn deterministic_forces_one_thread() {
        let file = FileConfig::parse("data = d\nthreads = 8\ndeterministic = true\n").unwrap();
        let cfg = resolve(file, CliOverrides::default()).unwrap();
        assert_eq!(cfg.effective_threads(), 1);
    }
}
