//! Dataset ingestion, deterministic splitting, image decode/resize and the
//! on-the-fly augmentation pipeline.
//!
//! The expected on-disk layout is the public malaria cell-image tree:
//! `root/Parasitized/*.png` and `root/Uninfected/*.png` (directory names
//! matched case-insensitively). Labels derive solely from the parent
//! directory name.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard target resolution for model input.
pub const TARGET_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Uninfected = 0,
    Parasitized = 1,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Uninfected => "uninfected",
            Label::Parasitized => "parasitized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uninfected" => Some(Label::Uninfected),
            "parasitized" => Some(Label::Parasitized),
            _ => None,
        }
    }

    pub fn to_scalar<T: Scalar>(self) -> T {
        match self {
            Label::Uninfected => T::zero(),
            Label::Parasitized => T::one(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled file. Samples start in the train split; [`split`] reassigns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

/// Labeled file list with deterministic split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<Sample>,
    /// Seed used for split assignment; `None` until [`split`] runs or when
    /// the manifest was read back from CSV.
    pub seed: Option<u64>,
    /// Non-image files skipped during ingestion.
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label, split: Split) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == label && s.split == split)
            .count()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// Samples of one split, in manifest order.
    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

fn find_class_dir(root: &Path, name: &str) -> Result<PathBuf> {
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() && entry.file_name().eq_ignore_ascii_case(name) {
            return Ok(entry.path());
        }
    }
    Err(Error::MissingClassDir(root.join(name)))
}

fn collect_class(
    dir: &Path,
    label: Label,
    samples: &mut Vec<Sample>,
    skipped: &mut usize,
) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let path = entry.path();
        let is_png = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if is_png {
            samples.push(Sample {
                path,
                label,
                split: Split::Train,
            });
        } else {
            *skipped += 1;
        }
    }
    Ok(())
}

/// Scan `root/Parasitized` and `root/Uninfected` for PNG files. The result
/// is sorted by path before any seeded operation touches it, so the
/// pipeline is independent of filesystem enumeration order.
pub fn ingest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::NoImages(root.to_path_buf()));
    }
    let parasitized = find_class_dir(root, "Parasitized")?;
    let uninfected = find_class_dir(root, "Uninfected")?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    collect_class(&parasitized, Label::Parasitized, &mut samples, &mut skipped)?;
    collect_class(&uninfected, Label::Uninfected, &mut samples, &mut skipped)?;
    if samples.is_empty() {
        return Err(Error::NoImages(root.to_path_buf()));
    }
    samples.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        samples,
        seed: None,
        skipped,
    })
}

/// Assign train/test splits: a seeded uniform permutation over the sorted
/// sample list, with the first `round(ratio * N)` samples going to train.
/// Not stratified by class.
pub fn split(mut manifest: DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::BadSplitRatio(ratio));
    }
    let n = manifest.samples.len();
    manifest.samples.sort_by(|a, b| a.path.cmp(&b.path));
    let train_size = (ratio * n as f64).round() as usize;
    if train_size == 0 {
        return Err(Error::DegenerateSplit {
            ratio,
            side: "train",
            n,
        });
    }
    if train_size >= n {
        return Err(Error::DegenerateSplit {
            ratio,
            side: "test",
            n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    for (rank, &idx) in order.iter().enumerate() {
        manifest.samples[idx].split = if rank < train_size {
            Split::Train
        } else {
            Split::Test
        };
    }
    manifest.seed = Some(seed);
    Ok(manifest)
}

/// Bilinear resize of one channel plane. Sample coordinates follow the
/// half-pixel convention `src = (dst + 0.5) * scale - 0.5`, clamped to the
/// source extent, with interpolation as nested lerps so constant inputs are
/// preserved exactly and same-size resizes are the identity bit for bit.
fn resize_plane<T: Scalar>(src: &[T], sw: usize, sh: usize, tw: usize, th: usize) -> Vec<T> {
    if (sw, sh) == (tw, th) {
        return src.to_vec();
    }
    let sx_scale = sw as f64 / tw as f64;
    let sy_scale = sh as f64 / th as f64;
    let mut out = Vec::with_capacity(tw * th);
    for ty in 0..th {
        let sy = ((ty as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for tx in 0..tw {
            let sx = ((tx as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            out.push(sample_bilinear(src, sw, x0, x1, y0, y1, fx, fy));
        }
    }
    out
}

/// Nested-lerp bilinear sample: exact when `fx == fy == 0` and exact for
/// constant neighbourhoods.
#[inline]
#[allow(clippy::too_many_arguments)]
fn sample_bilinear<T: Scalar>(
    plane: &[T],
    width: usize,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
) -> T {
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let p00 = plane[y0 * width + x0].as_f64();
    let p01 = plane[y0 * width + x1].as_f64();
    let p10 = plane[y1 * width + x0].as_f64();
    let p11 = plane[y1 * width + x1].as_f64();
    T::from_f64(lerp(lerp(p00, p01, fx), lerp(p10, p11, fx), fy))
}

/// Decode a PNG (RGB or RGBA; alpha dropped), bilinear-resize to
/// `target x target`, and return a `(1, 3, target, target)` tensor with
/// channel order RGB and values scaled to `[0, 1]`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>, target: usize) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let scale = 1.0 / 255.0;
    let mut data = Vec::with_capacity(3 * target * target);
    for ch in 0..3 {
        let plane: Vec<T> = (0..w * h)
            .map(|i| T::from_f64(raw[i * 3 + ch] as f64 * scale))
            .collect();
        data.extend(resize_plane(&plane, w, h, target, target));
    }
    Tensor::from_vec([1, 3, target, target], data)
}

/// Augmentation parameter ranges. The transform families are rotation,
/// zoom and horizontal/vertical flips; magnitudes here are this crate's
/// defaults and are recorded in run configs.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_max_deg: f64,
    pub zoom_range: (f64, f64),
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_max_deg: 20.0,
            zoom_range: (0.9, 1.1),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::InvalidConfig(format!(
                "rotation_max_deg must be in [0, 180], got {}",
                self.rotation_max_deg
            )));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig(format!(
                "zoom_range must be positive and ordered, got ({lo}, {hi})"
            )));
        }
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Horizontal flip (mirror across the vertical axis). Exact involution.
pub fn flip_h<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = image.shape();
    let mut out = image.clone();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let base = ((ni * c + ci) * h + y) * w;
                out.data_mut()[base..base + w].reverse();
            }
        }
    }
    out
}

/// Vertical flip (mirror across the horizontal axis). Exact involution.
pub fn flip_v<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = image.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = ((ni * c + ci) * h + y) * w;
                let dst = ((ni * c + ci) * h + (h - 1 - y)) * w;
                out.data_mut()[dst..dst + w].copy_from_slice(&image.data()[src..src + w]);
            }
        }
    }
    out
}

/// Rotate by `angle_deg` and zoom by `factor`, both about the image center,
/// as one inverse-mapped affine warp. Resampling is bilinear; out-of-bounds
/// source coordinates clamp to the nearest edge pixel.
pub fn rotate_zoom<T: Scalar>(image: &Tensor<T>, angle_deg: f64, factor: f64) -> Tensor<T> {
    if angle_deg == 0.0 && factor == 1.0 {
        return image.clone();
    }
    let [n, c, h, w] = image.shape();
    let theta = angle_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let inv_zoom = 1.0 / factor;
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let plane_off = (ni * c + ci) * h * w;
            let plane = &image.data()[plane_off..plane_off + h * w];
            for y in 0..h {
                let dy = y as f64 - cy;
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let sx = (cx + (cos_t * dx + sin_t * dy) * inv_zoom).clamp(0.0, (w - 1) as f64);
                    let sy =
                        (cy + (-sin_t * dx + cos_t * dy) * inv_zoom).clamp(0.0, (h - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let y0 = sy.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let v =
                        sample_bilinear(plane, w, x0, x1, y0, y1, sx - x0 as f64, sy - y0 as f64);
                    out.data_mut()[plane_off + y * w + x] = v;
                }
            }
        }
    }
    out
}

/// Random augmentation of one `(1, c, h, w)` image: rotation by
/// `U(-max, +max)` degrees, zoom by `U(zoom_range)`, then horizontal and
/// vertical flips with their configured probabilities. Exactly four rng
/// draws are consumed per call regardless of parameters.
pub fn augment<T: Scalar>(
    image: &Tensor<T>,
    params: &AugmentParams,
    rng: &mut SplitMix64,
) -> Tensor<T> {
    debug_assert_eq!(image.shape()[0], 1, "augment operates on single images");
    let angle = rng.uniform(-params.rotation_max_deg, params.rotation_max_deg);
    let zoom = rng.uniform(params.zoom_range.0, params.zoom_range.1);
    let do_hflip = rng.bernoulli(params.hflip_prob);
    let do_vflip = rng.bernoulli(params.vflip_prob);

    let mut out = rotate_zoom(image, angle, zoom);
    if do_hflip {
        out = flip_h(&out);
    }
    if do_vflip {
        out = flip_v(&out);
    }
    out
}

/// A decoded dataset split held in memory: one `(1, c, h, w)` tensor and a
/// 0/1 label per sample.
pub struct LoadedDataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<T>,
    pub paths: Vec<PathBuf>,
}

impl<T> LoadedDataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Decode and resize every sample of one split, in manifest order. Decode
/// failures surface the offending file path.
pub fn load_split<T: Scalar>(
    manifest: &DatasetManifest,
    which: Split,
    target: usize,
) -> Result<LoadedDataset<T>> {
    let selected: Vec<&Sample> = manifest.of_split(which).collect();
    let images: Vec<Tensor<T>> = selected
        .par_iter()
        .map(|s| load_image(&s.path, target))
        .collect::<Result<_>>()?;
    Ok(LoadedDataset {
        images,
        labels: selected.iter().map(|s| s.label.to_scalar()).collect(),
        paths: selected.iter().map(|s| s.path.clone()).collect(),
    })
}

/// Write the manifest as CSV: `path,label,split`, one row per sample.
/// Paths are written verbatim; the reader splits off the two fixed trailing
/// fields, so paths containing commas survive the round trip.
pub fn write_manifest_csv(manifest: &DatasetManifest, w: &mut impl Write) -> Result<()> {
    writeln!(w, "path,label,split")?;
    for s in &manifest.samples {
        writeln!(w, "{},{},{}", s.path.display(), s.label, s.split)?;
    }
    Ok(())
}

/// Read a manifest written by [`write_manifest_csv`].
pub fn read_manifest_csv(r: impl BufRead) -> Result<DatasetManifest> {
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != "path,label,split" {
                return Err(Error::BadManifest {
                    line: 1,
                    detail: format!("unexpected header `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.rsplitn(3, ',');
        let split_str = fields.next().unwrap_or_default();
        let label_str = fields.next().unwrap_or_default();
        let path_str = fields.next().ok_or_else(|| Error::BadManifest {
            line: i + 1,
            detail: "expected 3 fields".to_string(),
        })?;
        let label = Label::parse(label_str).ok_or_else(|| Error::BadManifest {
            line: i + 1,
            detail: format!("unknown label `{label_str}`"),
        })?;
        let split = Split::parse(split_str).ok_or_else(|| Error::BadManifest {
            line: i + 1,
            detail: format!("unknown split `{split_str}`"),
        })?;
        samples.push(Sample {
            path: PathBuf::from(path_str),
            label,
            split,
        });
    }
    if samples.is_empty() {
        return Err(Error::BadManifest {
            line: 0,
            detail: "manifest has no samples".to_string(),
        });
    }
    Ok(DatasetManifest {
        samples,
        seed: None,
        skipped: 0,
    })
}
