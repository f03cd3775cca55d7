//! Dataset ingestion: a procedurally generated class-structured corpus for
//! fully offline runs, plus directory ingestion with one class per
//! subdirectory. Batches are normalized to [-1, 1] and shuffled per epoch
//! from an explicit seed.
//!
//! The synthetic classes are two-color macro-cell layouts aligned with the
//! patch grid. Every class uses the same per-image random color pair and the
//! same 50/50 color split, so class identity lives in the global arrangement
//! rather than in pooled color statistics.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{HitaError, Result};

/// The resize filter used for directory ingestion, recorded in checkpoint
/// manifests.
pub const RESIZE_FILTER: &str = "bilinear";

/// A batch of images, stored as (B, 3, H, W) f32 in [-1, 1].
#[derive(Clone)]
pub struct ImageBatch {
    pub pixels: Tensor,
    pub labels: Option<Vec<u32>>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor, labels: Option<Vec<u32>>) -> Result<Self> {
        let dims = pixels.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != dims[3] {
            return Err(HitaError::shape(format!(
                "image batch must be (B, 3, H, H), got {dims:?}"
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != dims[0] {
                return Err(HitaError::shape(format!(
                    "labels length {} does not match batch size {}",
                    labels.len(),
                    dims[0]
                )));
            }
        }
        Ok(Self { pixels, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn image_size(&self) -> usize {
        self.pixels.dims()[2]
    }

    pub fn validate(&self, cfg: &PipelineConfig) -> Result<()> {
        if self.image_size() != cfg.image_size {
            return Err(HitaError::shape(format!(
                "image size {} does not match config image_size {}",
                self.image_size(),
                cfg.image_size
            )));
        }
        Ok(())
    }

    /// Convert one image of the batch to an RGB8 buffer.
    pub fn to_rgb8(&self, index: usize) -> Result<image::RgbImage> {
        let h = self.image_size();
        let img = self.pixels.narrow(0, index, 1)?.squeeze(0)?;
        let data = img.flatten_all()?.to_vec1::<f32>()?;
        let mut buf = image::RgbImage::new(h as u32, h as u32);
        for y in 0..h {
            for x in 0..h {
                let px = |c: usize| {
                    let v = data[c * h * h + y * h + x];
                    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
                };
                buf.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
            }
        }
        Ok(buf)
    }
}

/// Where training batches come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic,
    Directory(PathBuf),
}

impl DataSource {
    /// Resolve from an optional `--data` flag and the `HITA_DATA` env var.
    pub fn resolve(flag: Option<&str>) -> Self {
        let value = flag
            .map(|s| s.to_string())
            .or_else(|| std::env::var("HITA_DATA").ok());
        match value {
            Some(v) if v != "synthetic" && !v.is_empty() => Self::Directory(PathBuf::from(v)),
            _ => Self::Synthetic,
        }
    }
}

/// Two-color macro-cell layout for a class; `true` picks the first color.
fn layout_cell(class: u32, r: usize, c: usize, g: usize) -> bool {
    let half = g / 2;
    match class % 6 {
        0 => r < half,
        1 => c < half,
        2 => (r < half) == (c < half),
        3 => r % 2 == 0,
        4 => c % 2 == 0,
        _ => (r + c) % 2 == 0,
    }
}

/// Deterministic synthetic image for a global sample index. Training epochs
/// draw indices below `synthetic_size`; held-out evaluation draws above it,
/// so the two never overlap.
pub fn synthetic_image(cfg: &PipelineConfig, sample_index: u64) -> (Vec<f32>, u32) {
    let size = cfg.image_size;
    let f = cfg.downsample_factor;
    let g = cfg.grid_side();
    let class = (sample_index % cfg.num_classes as u64) as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x5851_f42d_4c95_7f2d) ^ sample_index);
    // color pair with a minimum separation so the two regions stay distinct
    let (ca, cb) = loop {
        let ca: [f32; 3] = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        let cb: [f32; 3] = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        let d2: f32 = ca.iter().zip(cb.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 > 1.0 {
            break (ca, cb);
        }
    };
    let mut data = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let color = if layout_cell(class, y / f, x / f, g) { ca } else { cb };
            for ch in 0..3 {
                let noise: f32 = rng.gen_range(-0.05..0.05);
                data[ch * size * size + y * size + x] = (color[ch] + noise).clamp(-1.0, 1.0);
            }
        }
    }
    (data, class)
}

fn synthetic_batch(cfg: &PipelineConfig, indices: &[u64], device: &Device) -> Result<ImageBatch> {
    let size = cfg.image_size;
    let mut pixels = Vec::with_capacity(indices.len() * 3 * size * size);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let (img, class) = synthetic_image(cfg, i);
        pixels.extend(img);
        labels.push(class);
    }
    let pixels = Tensor::from_vec(pixels, (indices.len(), 3, size, size), device)?;
    ImageBatch::new(pixels, Some(labels))
}

/// A specific synthetic sample of a class, for CLI demos.
pub fn synthetic_sample(cfg: &PipelineConfig, class: u32, nth: usize, device: &Device) -> Result<ImageBatch> {
    if class as usize >= cfg.num_classes {
        return Err(HitaError::validation(format!(
            "class {class} out of range (num_classes = {})",
            cfg.num_classes
        )));
    }
    let index = nth as u64 * cfg.num_classes as u64 + class as u64;
    synthetic_batch(cfg, &[index], device)
}

/// One held-out batch, disjoint from every training epoch.
pub fn held_out_batch(cfg: &PipelineConfig, n: usize, device: &Device) -> Result<ImageBatch> {
    let base = cfg.synthetic_size as u64;
    let indices: Vec<u64> = (0..n as u64).map(|i| base + i).collect();
    synthetic_batch(cfg, &indices, device)
}

/// Load one image file, bilinear-resized to the configured size.
pub fn load_image(path: &Path, cfg: &PipelineConfig, device: &Device) -> Result<ImageBatch> {
    let img = image::open(path)
        .map_err(|e| HitaError::data(format!("cannot read image `{}`: {e}", path.display())))?
        .resize_exact(cfg.image_size as u32, cfg.image_size as u32, FilterType::Triangle)
        .to_rgb8();
    let size = cfg.image_size;
    let mut data = vec![0f32; 3 * size * size];
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * size * size + y as usize * size + x as usize] =
                p.0[ch] as f32 / 127.5 - 1.0;
        }
    }
    let pixels = Tensor::from_vec(data, (1, 3, size, size), device)?;
    ImageBatch::new(pixels, None)
}

enum StreamSource {
    Synthetic { len: u64 },
    Files { items: Vec<(PathBuf, u32)> },
}

/// Infinite stream of shuffled batches; epochs reshuffle deterministically.
pub struct BatchStream {
    source: StreamSource,
    cfg: PipelineConfig,
    device: Device,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    warnings: usize,
}

impl BatchStream {
    fn epoch_len(&self) -> usize {
        match &self.source {
            StreamSource::Synthetic { len } => *len as usize,
            StreamSource::Files { items } => items.len(),
        }
    }

    fn reshuffle(&mut self) {
        let len = self.epoch_len();
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut rng);
        self.order = order;
        self.cursor = 0;
    }

    /// Number of unreadable files skipped so far.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn next_batch(&mut self) -> Result<ImageBatch> {
        let b = self.cfg.batch_size;
        match &self.source {
            StreamSource::Synthetic { .. } => {
                let mut indices = Vec::with_capacity(b);
                while indices.len() < b {
                    if self.cursor >= self.order.len() {
                        self.epoch += 1;
                        self.reshuffle();
                    }
                    indices.push(self.order[self.cursor] as u64);
                    self.cursor += 1;
                }
                synthetic_batch(&self.cfg, &indices, &self.device)
            }
            StreamSource::Files { items } => {
                let size = self.cfg.image_size;
                let mut pixels = Vec::with_capacity(b * 3 * size * size);
                let mut labels = Vec::with_capacity(b);
                let mut stale_epochs = 0usize;
                while labels.len() < b {
                    if self.cursor >= self.order.len() {
                        self.epoch += 1;
                        stale_epochs += 1;
                        if stale_epochs > 2 {
                            return Err(HitaError::data(
                                "no readable images left in dataset".to_string(),
                            ));
                        }
                        self.reshuffle();
                    }
                    let (path, label) = &items[self.order[self.cursor]];
                    self.cursor += 1;
                    match load_image(path, &self.cfg, &self.device) {
                        Ok(img) => {
                            pixels.extend(img.pixels.flatten_all()?.to_vec1::<f32>()?);
                            labels.push(*label);
                        }
                        Err(_) => {
                            self.warnings += 1;
                        }
                    }
                }
                let pixels =
                    Tensor::from_vec(pixels, (labels.len(), 3, size, size), &self.device)?;
                ImageBatch::new(pixels, Some(labels))
            }
        }
    }

    /// One unshuffled pass over the epoch, for evaluation-style scans.
    pub fn full_epoch(&mut self) -> Result<Vec<ImageBatch>> {
        let b = self.cfg.batch_size;
        match &self.source {
            StreamSource::Synthetic { len } => {
                let mut out = Vec::new();
                let mut i = 0u64;
                while i + b as u64 <= *len {
                    let indices: Vec<u64> = (i..i + b as u64).collect();
                    out.push(synthetic_batch(&self.cfg, &indices, &self.device)?);
                    i += b as u64;
                }
                Ok(out)
            }
            StreamSource::Files { items } => {
                let items = items.clone();
                let mut out = Vec::new();
                let size = self.cfg.image_size;
                let mut pixels = Vec::new();
                let mut labels = Vec::new();
                for (path, label) in &items {
                    match load_image(path, &self.cfg, &self.device) {
                        Ok(img) => {
                            pixels.extend(img.pixels.flatten_all()?.to_vec1::<f32>()?);
                            labels.push(*label);
                        }
                        Err(_) => self.warnings += 1,
                    }
                    if labels.len() == b {
                        let t = Tensor::from_vec(
                            std::mem::take(&mut pixels),
                            (b, 3, size, size),
                            &self.device,
                        )?;
                        out.push(ImageBatch::new(t, Some(std::mem::take(&mut labels)))?);
                    }
                }
                if !labels.is_empty() {
                    let n = labels.len();
                    let t = Tensor::from_vec(pixels, (n, 3, size, size), &self.device)?;
                    out.push(ImageBatch::new(t, Some(labels))?);
                }
                if out.is_empty() {
                    return Err(HitaError::data("no readable images in dataset".to_string()));
                }
                Ok(out)
            }
        }
    }
}

/// Build the batch stream for a data source.
pub fn ingest_dataset(
    source: &DataSource,
    cfg: &PipelineConfig,
    seed: u64,
    device: &Device,
) -> Result<BatchStream> {
    let src = match source {
        DataSource::Synthetic => StreamSource::Synthetic {
            len: cfg.synthetic_size as u64,
        },
        DataSource::Directory(root) => {
            let mut classes: Vec<PathBuf> = std::fs::read_dir(root)
                .map_err(|e| HitaError::data(format!("cannot read `{}`: {e}", root.display())))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            classes.sort();
            let mut items = Vec::new();
            if classes.is_empty() {
                // flat directory of images, single class
                let mut files: Vec<PathBuf> = std::fs::read_dir(root)
                    .map_err(|e| HitaError::data(format!("cannot read `{}`: {e}", root.display())))?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                items.extend(files.into_iter().map(|p| (p, 0u32)));
            } else {
                for (label, class_dir) in classes.iter().enumerate() {
                    let mut files: Vec<PathBuf> = std::fs::read_dir(class_dir)
                        .map_err(|e| {
                            HitaError::data(format!("cannot read `{}`: {e}", class_dir.display()))
                        })?
                        .filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .filter(|p| p.is_file())
                        .collect();
                    files.sort();
                    items.extend(files.into_iter().map(|p| (p, label as u32)));
                }
            }
            if items.is_empty() {
                return Err(HitaError::data(format!(
                    "dataset directory `{}` contains no files",
                    root.display()
                )));
            }
            StreamSource::Files { items }
        }
    };
    let mut stream = BatchStream {
        source: src,
        cfg: cfg.clone(),
        device: device.clone(),
        seed,
        epoch: 0,
        order: Vec::new(),
        cursor: 0,
        warnings: 0,
    };
    stream.reshuffle();
    Ok(stream)
}
